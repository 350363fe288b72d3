"""Model configuration: term declarations, priors and sampler settings.

Configuration documents are UTF-8 text with the sections ``[eta_l]``,
``[eta_ls]``, ``[eta_s]``, ``[sampler]`` and ``[priors]``.  Predictor
sections list one term per line::

    [eta_l]
    linear(x1)
    pspline(x2, knots=20, degree=3, diff=2)

    [eta_ls]
    random_intercept()
    random_slope(t)
    mrf(region, map=grid.gra)

    [eta_s]
    baseline_pspline(knots=10, degree=3, diff=2)

    [sampler]
    iterations = 20000
    burn_in = 5000

Comments start with ``#``.  Sampler and prior sections hold ``key = value``
pairs.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, fields, replace

import numpy as np

__all__ = [
    "ConfigError",
    "Hyperpriors",
    "PredictorSpec",
    "SamplerConfig",
    "TermKind",
    "TermSpec",
    "parse_model_config",
    "serialize_model_config",
    "validate_against_data",
]

PREDICTORS = ("eta_l", "eta_ls", "eta_s")
TIME_ALIASES = ("t", "time")


class ConfigError(ValueError):
    """Syntax or semantic error in a model configuration.

    ``line`` and ``column`` are 1-based and ``None`` for errors that concern
    the document as a whole.
    """

    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class TermKind(str, enum.Enum):
    LINEAR = "linear"
    RANDOM_INTERCEPT = "random_intercept"
    RANDOM_SLOPE = "random_slope"
    PSPLINE = "pspline"
    MRF = "mrf"
    BASELINE_PSPLINE = "baseline_pspline"


SMOOTH_KINDS = (TermKind.PSPLINE, TermKind.BASELINE_PSPLINE)
RANDOM_KINDS = (TermKind.RANDOM_INTERCEPT, TermKind.RANDOM_SLOPE)


@dataclass(frozen=True)
class TermSpec:
    """One additive effect.

    ``prior`` only matters for linear terms: ``"flat"`` (default) or
    ``"gaussian"`` (ridge penalty with an estimated variance).  ``a`` and
    ``b`` override the inverse-gamma hyperparameters of the effect variance.
    """

    kind: TermKind
    covariate: str | None = None
    knots: int = 10
    degree: int = 3
    diff_order: int = 2
    map_ref: str | None = None
    prior: str = "flat"
    a: float | None = None
    b: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TermKind(self.kind))
        kind = self.kind
        if kind in SMOOTH_KINDS:
            if self.degree < 0:
                raise ConfigError(f"{kind.value}: degree must be non-negative")
            if self.knots < self.degree + 2:
                raise ConfigError(f"{kind.value}: knots must be >= degree + 2")
            if self.diff_order not in (1, 2):
                raise ConfigError(f"{kind.value}: diff must be 1 or 2")
            if self.diff_order >= self.knots:
                raise ConfigError(f"{kind.value}: diff must be smaller than the number of basis functions")
        if kind is TermKind.BASELINE_PSPLINE and self.covariate is None:
            object.__setattr__(self, "covariate", "t")
        if kind in (TermKind.LINEAR, TermKind.PSPLINE, TermKind.MRF, TermKind.RANDOM_SLOPE):
            if not self.covariate:
                raise ConfigError(f"{kind.value} requires a covariate")
        if kind is TermKind.MRF and not self.map_ref:
            raise ConfigError("mrf requires map=<adjacency file>")
        if self.prior not in ("flat", "gaussian"):
            raise ConfigError(f"unknown prior {self.prior!r}; use 'flat' or 'gaussian'")
        for name in ("a", "b"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def label(self):
        """Stable block name used for draws and summaries."""
        if self.kind is TermKind.RANDOM_INTERCEPT:
            return "random_intercept"
        if self.kind is TermKind.BASELINE_PSPLINE:
            return "baseline"
        return f"{self.kind.value}_{self.covariate}"

    @property
    def uses_time(self):
        return self.covariate in TIME_ALIASES

    def to_text(self):
        args = []
        if self.kind is TermKind.RANDOM_INTERCEPT:
            pass
        elif self.kind is TermKind.BASELINE_PSPLINE:
            if self.covariate not in (None, "t"):
                args.append(self.covariate)
        else:
            args.append(self.covariate)
        if self.kind in SMOOTH_KINDS:
            args += [f"knots={self.knots}", f"degree={self.degree}", f"diff={self.diff_order}"]
        if self.kind is TermKind.MRF:
            args.append(f"map={self.map_ref}")
        if self.kind is TermKind.LINEAR and self.prior != "flat":
            args.append(f"prior={self.prior}")
        for name in ("a", "b"):
            v = getattr(self, name)
            if v is not None:
                args.append(f"{name}={v!r}")
        return f"{self.kind.value}({', '.join(args)})"


@dataclass(frozen=True)
class PredictorSpec:
    eta_l: tuple = ()
    eta_ls: tuple = ()
    eta_s: tuple = ()
    association_init: float = -0.1

    def __post_init__(self):
        for name in PREDICTORS:
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def terms(self):
        """Iterate ``(predictor, term)`` pairs."""
        for name in PREDICTORS:
            for term in getattr(self, name):
                yield name, term

    def validate(self):
        """Raise :class:`ConfigError` on violated structural invariants."""
        n_mrf = sum(t.kind is TermKind.MRF for _, t in self.terms())
        if n_mrf > 1:
            raise ConfigError("at most one MRF term is allowed in the whole model")
        for pred, term in self.terms():
            if term.kind in RANDOM_KINDS and pred != "eta_ls":
                raise ConfigError(f"{term.kind.value} must be placed in eta_ls (found in {pred})")
            if term.kind is TermKind.BASELINE_PSPLINE and pred != "eta_s":
                raise ConfigError(f"baseline_pspline must be placed in eta_s (found in {pred})")
        n_base = sum(t.kind is TermKind.BASELINE_PSPLINE for t in self.eta_s)
        if n_base != 1:
            raise ConfigError(f"exactly one baseline_pspline term is required in eta_s (found {n_base})")
        seen = set()
        for pred, term in self.terms():
            key = (pred, term.label)
            if key in seen:
                raise ConfigError(f"duplicate term {term.to_text()} in {pred}")
            seen.add(key)
        return self


@dataclass(frozen=True)
class Hyperpriors:
    """Inverse-gamma hyperparameters.

    ``a0, b0`` govern the model variance, ``a, b`` every effect variance
    without a per-term override, ``a_alpha, b_alpha`` the association
    variance.
    """

    a0: float = 0.001
    b0: float = 0.001
    a: float = 0.001
    b: float = 0.001
    a_alpha: float = 0.001
    b_alpha: float = 0.001

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and v > 0 and np.isfinite(v)):
                raise ConfigError(f"hyperprior {f.name} must be a positive real (got {v!r})")

    def for_term(self, term):
        return (term.a if term.a is not None else self.a, term.b if term.b is not None else self.b)


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run settings.

    ``cuts`` is the interval strategy for augmentation (``event_times`` or
    ``quantiles:J``); ``evaluation`` picks the time point at which
    time-varying terms are evaluated on augmented rows (``end`` or ``mid``).
    """

    iterations: int = 20000
    burn_in: int = 5000
    thinning: int = 15
    seed: int = 1
    chains: int = 1
    cuts: str = "event_times"
    subject_splits: bool = True
    evaluation: str = "end"

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be a positive integer")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        if self.burn_in >= self.iterations:
            raise ConfigError("burn_in must be < iterations")
        if self.thinning < 1:
            raise ConfigError("thinning must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.chains < 1:
            raise ConfigError("chains must be a positive integer")
        if self.evaluation not in ("end", "mid"):
            raise ConfigError("evaluation must be 'end' or 'mid'")
        if not (self.cuts == "event_times" or re.fullmatch(r"quantiles:\d+", self.cuts)):
            raise ConfigError("cuts must be 'event_times' or 'quantiles:J'")

    @property
    def n_draws(self):
        return (self.iterations - self.burn_in) // self.thinning

    def summarizable(self):
        return self.n_draws >= 100


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_TERM_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)$")
_KV_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
_IDENT_RE = re.compile(r"^[A-Za-z_.][A-Za-z0-9_.\-/]*$")

_TERM_KEYS = {"knots": int, "degree": int, "diff": int, "map": str, "prior": str, "a": float, "b": float}
_SAMPLER_KEYS = {
    "iterations": int,
    "burn_in": int,
    "thinning": int,
    "seed": int,
    "chains": int,
    "alpha_init": float,
    "cuts": str,
    "subject_splits": "bool",
    "evaluation": str,
}
_PRIOR_KEYS = {"a0", "b0", "a", "b", "a_alpha", "b_alpha"}


def _convert(value, typ, lineno, col):
    try:
        if typ is int:
            if not re.fullmatch(r"[+-]?\d+", value):
                raise ValueError
            return int(value)
        if typ is float:
            return float(value)
        if typ == "bool":
            if value.lower() in ("true", "yes", "1"):
                return True
            if value.lower() in ("false", "no", "0"):
                return False
            raise ValueError
        return value
    except ValueError:
        name = "boolean" if typ == "bool" else typ.__name__
        raise ConfigError(f"expected {name}, got {value!r}", lineno, col) from None


def _parse_term(body, lineno, col):
    m = _TERM_RE.match(body)
    if not m:
        raise ConfigError(f"expected a term like linear(x1), got {body!r}", lineno, col)
    name, inner = m.group(1), m.group(2)
    try:
        kind = TermKind(name)
    except ValueError:
        raise ConfigError(f"unknown term type {name!r}", lineno, col) from None
    positional, kwargs = [], {}
    arg_col = col + body.index("(") + 1
    if inner.strip():
        offset = 0
        for raw in inner.split(","):
            acol = arg_col + offset + (len(raw) - len(raw.lstrip()))
            offset += len(raw) + 1
            tok = raw.strip()
            if not tok:
                raise ConfigError("empty argument", lineno, acol)
            if "=" in tok:
                key, _, val = tok.partition("=")
                key, val = key.strip(), val.strip()
                if key not in _TERM_KEYS:
                    raise ConfigError(f"unknown argument {key!r} for {name}", lineno, acol)
                if key in kwargs:
                    raise ConfigError(f"argument {key!r} given twice", lineno, acol)
                kwargs[key] = _convert(val, _TERM_KEYS[key], lineno, acol)
            else:
                if kwargs:
                    raise ConfigError("positional argument after keyword argument", lineno, acol)
                if not _IDENT_RE.match(tok):
                    raise ConfigError(f"invalid covariate name {tok!r}", lineno, acol)
                positional.append(tok)
    if len(positional) > 1:
        raise ConfigError(f"{name} takes at most one covariate", lineno, col)
    if kind is TermKind.RANDOM_INTERCEPT and positional:
        raise ConfigError("random_intercept takes no covariate", lineno, col)
    args = {"kind": kind}
    if positional:
        args["covariate"] = positional[0]
    rename = {"diff": "diff_order", "map": "map_ref"}
    for key, val in kwargs.items():
        args[rename.get(key, key)] = val
    if kind not in SMOOTH_KINDS and {"knots", "degree", "diff"} & kwargs.keys():
        raise ConfigError(f"{name} does not take spline arguments", lineno, col)
    if kind is not TermKind.MRF and "map" in kwargs:
        raise ConfigError(f"{name} does not take a map", lineno, col)
    if kind is not TermKind.LINEAR and "prior" in kwargs:
        raise ConfigError("only linear terms take a prior choice", lineno, col)
    try:
        return TermSpec(**args)
    except ConfigError as err:
        raise ConfigError(err.message, lineno, col) from None


def parse_model_config(text):
    """Parse a configuration document.

    Returns
    -------
    (PredictorSpec, Hyperpriors, SamplerConfig)

    Raises
    ------
    ConfigError
        With line and column for syntax errors, naming the violated
        invariant for semantic errors.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    terms = {name: [] for name in PREDICTORS}
    sampler, priors = {}, {}
    section = None
    seen_sections = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.strip()
        if not stripped:
            continue
        col = len(line) - len(line.lstrip()) + 1
        m = _SECTION_RE.match(stripped)
        if m:
            section = m.group(1)
            if section not in PREDICTORS + ("sampler", "priors"):
                raise ConfigError(f"unknown section [{section}]", lineno, col)
            if section in seen_sections:
                raise ConfigError(f"section [{section}] appears twice", lineno, col)
            seen_sections.add(section)
            continue
        if section is None:
            raise ConfigError("content before the first section header", lineno, col)
        if section in PREDICTORS:
            terms[section].append(_parse_term(stripped, lineno, col))
            continue
        m = _KV_RE.match(stripped)
        if not m:
            raise ConfigError(f"expected 'key = value' in [{section}]", lineno, col)
        key, value = m.group(1), m.group(2).strip()
        vcol = col + stripped.index(value) if value else col + len(stripped)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno, vcol)
        if section == "sampler":
            if key not in _SAMPLER_KEYS:
                raise ConfigError(f"unknown sampler setting {key!r}", lineno, col)
            target, typ = sampler, _SAMPLER_KEYS[key]
        else:
            if key not in _PRIOR_KEYS:
                raise ConfigError(f"unknown prior setting {key!r}", lineno, col)
            target, typ = priors, float
        if key in target:
            raise ConfigError(f"{key!r} given twice", lineno, col)
        target[key] = _convert(value, typ, lineno, vcol)

    alpha_init = sampler.pop("alpha_init", -0.1)
    spec = PredictorSpec(terms["eta_l"], terms["eta_ls"], terms["eta_s"], alpha_init)
    spec.validate()
    return spec, Hyperpriors(**priors), SamplerConfig(**sampler)


def serialize_model_config(spec, hyper=None, sampler=None):
    """Inverse of :func:`parse_model_config`."""
    hyper = hyper or Hyperpriors()
    sampler = sampler or SamplerConfig()
    out = []
    for name in PREDICTORS:
        out.append(f"[{name}]")
        out.extend(t.to_text() for t in getattr(spec, name))
        out.append("")
    out.append("[sampler]")
    for f in fields(sampler):
        v = getattr(sampler, f.name)
        out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    out.append(f"alpha_init = {spec.association_init!r}")
    out.append("")
    out.append("[priors]")
    for f in fields(hyper):
        out.append(f"{f.name} = {getattr(hyper, f.name)!r}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# data checks
# --------------------------------------------------------------------------


def validate_against_data(spec, long_data, surv_data, maps=None):
    """Check that every term can be built from the data.

    ``maps`` maps ``map_ref`` strings to :class:`~spajm.basis.AdjacencyGraph`
    objects.  Returns a list of human-readable diagnostics; empty means
    consistent.
    """
    diags = []
    maps = maps or {}
    long_cols = set(long_data.columns)
    surv_cols = set(surv_data.columns)
    for pred, term in spec.terms():
        cov = term.covariate
        if cov is None or term.uses_time:
            continue
        if pred == "eta_s":
            available = surv_cols | long_cols
        else:
            available = long_cols
        if cov not in available:
            diags.append(f"unknown column {cov} (used by {term.to_text()} in {pred})")
            continue
        source = long_data if cov in long_cols else surv_data
        col = source[cov]
        if term.kind is TermKind.MRF:
            graph = maps.get(term.map_ref)
            if graph is None:
                diags.append(f"adjacency map {term.map_ref!r} not loaded")
                continue
            known = set(graph.labels)
            missing = sorted({str(v) for v in col.unique()} - known)
            for lab in missing:
                diags.append(f"region {lab} of column {cov} not in adjacency file {term.map_ref}")
        elif not np.issubdtype(col.dtype, np.number):
            diags.append(f"column {cov} must be numeric for {term.kind.value}")
        elif not np.all(np.isfinite(col.to_numpy(dtype=float))):
            diags.append(f"column {cov} contains non-finite values")
    return diags


def with_overrides(sampler, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(sampler, **changes) if changes else sampler
