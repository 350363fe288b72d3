"""Structured piecewise additive joint models for longitudinal and survival data."""

from .basis import (
    AdjacencyGraph,
    EffectBlock,
    apply_sum_to_zero,
    bspline_basis,
    difference_penalty,
    lattice_graph,
    mrf_design,
    mrf_penalty,
    random_effect_design,
    read_gra,
    write_gra,
)
from .config import (
    ConfigError,
    Hyperpriors,
    PredictorSpec,
    SamplerConfig,
    TermKind,
    TermSpec,
    parse_model_config,
    serialize_model_config,
    validate_against_data,
)
from .data import DataError
from .estimator import JointModel, PEDTransformer
from .model import JointDesign, ModelBlock, build_design
from .ped import AugmentedDataset, augment, make_cuts, pe_loglik_oracle
from .posterior import PosteriorSummary, hdi, score_against_truth, summarize
from .sampler import ChainOutput, ChainState, SamplerError, run_chain, run_design
from .simulate import SimulationConfig, f1, f2, f_geo, simulate_study, study_model_spec

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "AugmentedDataset",
    "ChainOutput",
    "ChainState",
    "ConfigError",
    "DataError",
    "EffectBlock",
    "Hyperpriors",
    "JointDesign",
    "JointModel",
    "ModelBlock",
    "PEDTransformer",
    "PosteriorSummary",
    "PredictorSpec",
    "SamplerConfig",
    "SamplerError",
    "SimulationConfig",
    "TermKind",
    "TermSpec",
    "apply_sum_to_zero",
    "augment",
    "bspline_basis",
    "build_design",
    "difference_penalty",
    "f1",
    "f2",
    "f_geo",
    "hdi",
    "lattice_graph",
    "make_cuts",
    "mrf_design",
    "mrf_penalty",
    "parse_model_config",
    "pe_loglik_oracle",
    "random_effect_design",
    "read_gra",
    "run_chain",
    "run_design",
    "score_against_truth",
    "serialize_model_config",
    "simulate_study",
    "study_model_spec",
    "summarize",
    "validate_against_data",
    "write_gra",
]
