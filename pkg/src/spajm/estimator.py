"""scikit-learn style front end.

:class:`JointModel` wraps design assembly, the sampler and posterior
summaries behind ``fit``/``predict``; :class:`PEDTransformer` exposes the
piecewise-exponential augmentation as a transformer.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import (
    Hyperpriors,
    PredictorSpec,
    SamplerConfig,
    parse_model_config,
    validate_against_data,
    with_overrides,
)
from .data import check_longitudinal, check_survival
from .model import build_design
from .ped import augment, make_cuts
from .posterior import summarize
from .sampler import run_design


class JointModel(BaseEstimator):
    """Bayesian joint model of a longitudinal outcome and a survival time.

    Parameters
    ----------
    spec : PredictorSpec or str
        Model terms, or a configuration document with optional
        ``[sampler]`` and ``[priors]`` sections.
    iterations, burn_in, thinning, seed : int, optional
        Sampler budget.
    hyper : Hyperpriors, optional
    maps : dict, optional
        Adjacency graphs keyed by the ``map`` names used in MRF terms.
    cuts : str, optional
        ``"event_times"`` or ``"quantiles:J"``.
    subject_splits : bool, optional
        Also split each subject's intervals at its own measurement times.
    evaluation : {"end", "mid"}, optional
        Where in an interval time-varying terms are evaluated.
    level : float
        Mass of the reported highest-density intervals.

    Sampler settings left at ``None`` come from the configuration document
    or the package defaults.
    """

    def __init__(self, spec=None, *, iterations=None, burn_in=None, thinning=None, seed=None,
                 hyper=None, maps=None, cuts=None, subject_splits=None, evaluation=None,
                 level=0.95):
        self.spec = spec
        self.iterations = iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.seed = seed
        self.hyper = hyper
        self.maps = maps
        self.cuts = cuts
        self.subject_splits = subject_splits
        self.evaluation = evaluation
        self.level = level

    def _resolve(self):
        hyper, sampler = Hyperpriors(), SamplerConfig()
        spec = self.spec
        if isinstance(spec, str):
            spec, hyper, sampler = parse_model_config(spec)
        if not isinstance(spec, PredictorSpec):
            raise TypeError("spec must be a PredictorSpec or a configuration document")
        spec.validate()
        sampler = with_overrides(
            sampler,
            iterations=self.iterations,
            burn_in=self.burn_in,
            thinning=self.thinning,
            seed=self.seed,
            cuts=self.cuts,
            subject_splits=self.subject_splits,
            evaluation=self.evaluation,
        )
        return spec, self.hyper or hyper, sampler

    def fit(self, X, y):
        """Fit on longitudinal rows ``X`` and survival records ``y``."""
        spec, hyper, sampler = self._resolve()
        surv = check_survival(y)
        long = check_longitudinal(X, surv)
        problems = validate_against_data(spec, long, surv, self.maps or {})
        if problems:
            raise ValueError("; ".join(problems))
        self.design_ = build_design(spec, long, surv, hyper=hyper, sampler=sampler, maps=self.maps or {})
        self.sampler_config_ = sampler
        self.chain_ = run_design(self.design_, sampler.iterations, sampler.burn_in, sampler.thinning, sampler.seed)
        self.summary_ = summarize(self.chain_, self.design_.blocks, level=self.level)
        self.coef_ = self.summary_.scalars.set_index("parameter")["mean"]
        self.acceptance_ = dict(self.chain_.acceptance)
        return self

    def _block_rows(self, block, frame):
        times = frame["time"].to_numpy(dtype=float)
        if block.kind == "intercept":
            return np.ones((len(frame), 1))
        term = block.term
        x = times if term.uses_time else (frame[term.covariate].to_numpy() if term.covariate else None)
        if block.kind in ("random_intercept", "random_slope"):
            pos = {sid: i for i, sid in enumerate(block.labels)}
            idx = frame["id"].map(pos)
            if idx.isna().any():
                raise ValueError("prediction rows contain subjects unseen during fit")
            Z = np.zeros((len(frame), len(block.labels)))
            val = np.ones(len(frame)) if block.kind == "random_intercept" else np.asarray(x, dtype=float)
            Z[np.arange(len(frame)), idx.to_numpy(dtype=int)] = val
            return Z
        return np.asarray(block.evaluate(x))

    def predict(self, X):
        """Posterior mean of the longitudinal mean ``eta_l + eta_ls`` at rows ``X``."""
        check_is_fitted(self, "chain_")
        frame = X if isinstance(X, pd.DataFrame) else pd.DataFrame(X)
        if "time" not in frame.columns or "id" not in frame.columns:
            raise ValueError("prediction rows need 'id' and 'time' columns")
        out = np.zeros(len(frame))
        for b in self.design_.blocks:
            if b.predictor == "s":
                continue
            coef = self.chain_.block_draws(b.name).mean(axis=0)
            out += self._block_rows(b, frame) @ coef
        return out

    def score(self, X, y=None):
        """Negative mean squared error of :meth:`predict` against ``X['y']``."""
        pred = self.predict(X)
        return -float(np.mean((np.asarray(X["y"], dtype=float) - pred) ** 2))


class PEDTransformer(TransformerMixin, BaseEstimator):
    """Piecewise-exponential augmentation of survival records.

    ``fit`` learns the interval cuts from the survival data; ``transform``
    returns the augmented rows as a DataFrame.  Longitudinal covariates are
    passed through the ``long`` keyword.
    """

    def __init__(self, cuts="event_times", extra=None, subject_splits=False, fill="backward"):
        self.cuts = cuts
        self.extra = extra
        self.subject_splits = subject_splits
        self.fill = fill

    def fit(self, X, y=None, long=None):
        self.cuts_ = make_cuts(check_survival(X), self.cuts, extra=self.extra)
        return self

    def transform(self, X, long=None):
        check_is_fitted(self, "cuts_")
        ped = augment(X, long, self.cuts_, subject_splits=self.subject_splits, fill=self.fill)
        self.n_rows_ = len(ped)
        return ped.frame.drop(columns=["t_exit"])

    def fit_transform(self, X, y=None, long=None):
        return self.fit(X, long=long).transform(X, long=long)
