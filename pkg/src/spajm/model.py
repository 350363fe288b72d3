"""Assemble sampler-ready effect blocks from a model spec and data.

A joint model has two row sets: the longitudinal measurements (Gaussian
likelihood) and the augmented piecewise-exponential rows (Poisson
likelihood).  Longitudinal blocks live on the first, survival blocks on the
second, and shared blocks on both.  Each :class:`ModelBlock` carries one
design per row set it touches, its penalty in (possibly constrained)
coordinates and the map back to the original basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import (
    EffectBlock,
    apply_sum_to_zero,
    bspline_knots,
    difference_penalty,
    matrix_rank,
    mrf_design,
    mrf_penalty,
    _design_from_knots,
)
from .config import Hyperpriors, PredictorSpec, SamplerConfig, TermKind, TermSpec
from .data import check_longitudinal, check_survival
from .ped import augment, make_cuts

PREDICTOR_SHORT = {"eta_l": "l", "eta_ls": "ls", "eta_s": "s"}


class DenseDesign:
    """Ordinary design matrix."""

    diagonal = False

    def __init__(self, matrix):
        self.matrix = np.ascontiguousarray(np.atleast_2d(np.asarray(matrix, dtype=float)))
        if self.matrix.shape[0] == 1 and np.ndim(matrix) == 1:
            self.matrix = self.matrix.T.copy()
        self.n_rows, self.n_cols = self.matrix.shape
        self._col = self.matrix[:, 0].copy() if self.n_cols == 1 else None
        self._sq = self._col * self._col if self.n_cols == 1 else None

    def dot(self, theta):
        if self._col is not None:
            return self._col * theta[0]
        return self.matrix @ theta

    def tdot(self, v):
        return v @ self.matrix

    def gram(self, w):
        if self._sq is not None:
            return np.array([[np.dot(w, self._sq)]])
        return (self.matrix.T * w) @ self.matrix

    def toarray(self):
        return self.matrix


class IndexDesign:
    """Design with one nonzero per row (random effects, region incidence).

    Row ``r`` equals ``value[r]`` in column ``index[r]``.  With a constraint
    transform ``T`` the design is ``Z @ T``.
    """

    def __init__(self, index, value, n_cols, transform=None):
        self.index = np.asarray(index, dtype=np.intp)
        self.value = np.asarray(value, dtype=float)
        self.base_cols = int(n_cols)
        self.transform = transform
        self.n_rows = self.index.size
        self.n_cols = self.base_cols if transform is None else transform.shape[1]
        self.diagonal = transform is None
        self._sq = self.value**2

    def _lift(self, theta):
        return theta if self.transform is None else self.transform @ theta

    def dot(self, theta):
        return self.value * self._lift(theta)[self.index]

    def tdot(self, v):
        out = np.bincount(self.index, weights=self.value * v, minlength=self.base_cols)
        return out if self.transform is None else out @ self.transform

    def gram(self, w):
        d = np.bincount(self.index, weights=w * self._sq, minlength=self.base_cols)
        if self.transform is None:
            return d
        T = self.transform
        return (T.T * d) @ T

    def toarray(self):
        Z = np.zeros((self.n_rows, self.base_cols))
        Z[np.arange(self.n_rows), self.index] = self.value
        return Z if self.transform is None else Z @ self.transform


@dataclass
class ModelBlock:
    """One effect as seen by the sampler.

    ``K`` is the penalty in sampler coordinates.  ``penalized=False`` means a
    flat prior (no variance parameter).  ``fixed_sigma2`` keeps the variance
    at its starting value instead of drawing it.  ``transform`` maps sampler
    coordinates to the original basis (``None`` for the identity).
    """

    name: str
    predictor: str
    kind: str
    dim: int
    K: np.ndarray
    design_long: object = None
    design_aug: object = None
    penalized: bool = True
    rank: int = 0
    a: float = 0.001
    b: float = 0.001
    sigma2_init: float = 1.0
    fixed_sigma2: bool = False
    transform: np.ndarray | None = None
    term: TermSpec | None = None
    basis: object = None
    constraint: np.ndarray | None = None
    labels: tuple | None = None
    reference: np.ndarray | None = None
    bounds: tuple | None = None

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if self.K.shape != (self.dim, self.dim):
            raise ValueError(f"{self.name}: penalty shape {self.K.shape} does not match dim {self.dim}")
        if not self.penalized:
            self.K = np.zeros((self.dim, self.dim))
            self.rank = 0
        elif self.rank == 0:
            self.rank = matrix_rank(self.K)
        kd = np.diag(self.K)
        self.K_is_diag = bool(np.all(self.K == np.diag(kd)))
        self.K_diag = kd.copy()
        for d in (self.design_long, self.design_aug):
            if d is not None and d.n_cols != self.dim:
                raise ValueError(f"{self.name}: design has {d.n_cols} columns, expected {self.dim}")
        self.diagonal = self.K_is_diag and all(
            d is None or d.diagonal for d in (self.design_long, self.design_aug)
        )

    @property
    def original_dim(self):
        return self.dim if self.transform is None else self.transform.shape[0]

    def to_original(self, theta):
        theta = np.asarray(theta)
        return theta if self.transform is None else theta @ self.transform.T

    def quad(self, theta):
        if self.K_is_diag:
            return float(np.dot(self.K_diag * theta, theta))
        return float(theta @ self.K @ theta)

    def evaluate(self, values):
        """Original-basis design at new covariate values (or region labels)."""
        if self.basis is None:
            raise ValueError(f"{self.name} has no evaluation basis")
        return self.basis(values)


@dataclass
class JointDesign:
    """Everything the sampler needs: responses, offsets and blocks."""

    y: np.ndarray
    blocks: list
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hyper: Hyperpriors = field(default_factory=Hyperpriors)
    alpha_init: float = -0.1
    update_alpha: bool = True
    sigma2_alpha_init: float = 1.0
    fixed_sigma2_alpha: bool = False
    sigma2_eps_init: float = 1.0
    fixed_sigma2_eps: bool = False
    ped: object = None
    long: object = None
    surv: object = None
    subject_ids: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError("block names must be unique")
        for b in self.blocks:
            if b.predictor in ("l", "ls") and (b.design_long is None or b.design_long.n_rows != self.y.size):
                raise ValueError(f"{b.name}: longitudinal design rows do not match y")
            if b.predictor in ("s", "ls") and self.has_survival:
                if b.design_aug is None or b.design_aug.n_rows != self.delta.size:
                    raise ValueError(f"{b.name}: augmented design rows do not match delta")
            if b.predictor == "s" and not self.has_survival:
                raise ValueError(f"{b.name}: survival block without survival data")
        if not self.has_survival:
            self.update_alpha = False

    @property
    def has_survival(self):
        return self.delta.size > 0

    @property
    def has_longitudinal(self):
        return self.y.size > 0

    def blocks_of(self, predictor):
        return [b for b in self.blocks if b.predictor == predictor]

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


# --------------------------------------------------------------------------
# assembly from a spec
# --------------------------------------------------------------------------


def _column(frame, term, times):
    if term.uses_time:
        return np.asarray(times, dtype=float)
    return frame[term.covariate].to_numpy()


def _spline_basis_fn(bounds, knots, degree):
    t = bspline_knots(bounds[0], bounds[1], knots, degree)

    def basis(values):
        return _design_from_knots(np.asarray(values, dtype=float), t, degree)

    return basis


def build_design(spec, long, surv, *, hyper=None, sampler=None, maps=None):
    """Build a :class:`JointDesign` from a validated spec and data."""
    if not isinstance(spec, PredictorSpec):
        raise TypeError("spec must be a PredictorSpec")
    hyper = hyper or Hyperpriors()
    sampler = sampler or SamplerConfig()
    maps = maps or {}
    surv = check_survival(surv)
    long = check_longitudinal(long, surv)

    cuts = make_cuts(surv, sampler.cuts)
    ped = augment(surv, long, cuts, subject_splits=sampler.subject_splits)
    pf = ped.frame
    t_long = long["time"].to_numpy()
    t_aug = ped.evaluation_times(sampler.evaluation)

    ids = surv["id"].to_numpy()
    pos = {sid: i for i, sid in enumerate(ids)}
    subj_long = long["id"].map(pos).to_numpy()
    subj_aug = pf["id"].map(pos).to_numpy()

    blocks = [
        ModelBlock(
            name="l.intercept",
            predictor="l",
            kind="intercept",
            dim=1,
            K=np.zeros((1, 1)),
            design_long=DenseDesign(np.ones((len(long), 1))),
            penalized=False,
            basis=lambda v: np.ones((len(np.atleast_1d(v)), 1)),
        )
    ]

    for pred, term in spec.terms():
        short = PREDICTOR_SHORT[pred]
        name = f"{short}.{term.label}"
        a, b = hyper.for_term(term)
        on_long = short in ("l", "ls")
        on_aug = short in ("s", "ls")
        x_long = _column(long, term, t_long) if on_long and term.covariate else None
        x_aug = _column(pf, term, t_aug) if on_aug and term.covariate else None
        if short == "s":
            if term.covariate in surv.columns:
                x_ref = surv[term.covariate].to_numpy()
            else:
                x_ref = x_aug
        else:
            x_ref = x_long

        kind = term.kind
        if kind is TermKind.LINEAR:
            K = np.eye(1) if term.prior == "gaussian" else np.zeros((1, 1))
            blk = ModelBlock(
                name, short, "linear", 1, K,
                design_long=DenseDesign(x_long.astype(float).reshape(-1, 1)) if on_long else None,
                design_aug=DenseDesign(x_aug.astype(float).reshape(-1, 1)) if on_aug else None,
                penalized=term.prior == "gaussian", a=a, b=b, term=term,
                basis=lambda v: np.asarray(v, dtype=float).reshape(-1, 1),
                reference=np.asarray(x_ref, dtype=float),
                bounds=(float(np.min(x_ref)), float(np.max(x_ref))),
            )
        elif kind in (TermKind.PSPLINE, TermKind.BASELINE_PSPLINE):
            pool = [x for x in (x_long, x_aug, x_ref) if x is not None]
            allx = np.concatenate([np.asarray(x, dtype=float) for x in pool])
            if kind is TermKind.BASELINE_PSPLINE:
                bounds = (0.0, float(cuts[-1]))
            else:
                bounds = (float(allx.min()), float(allx.max()))
            basis = _spline_basis_fn(bounds, term.knots, term.degree)
            K = difference_penalty(term.knots, term.diff_order)
            T = constraint = None
            if kind is TermKind.PSPLINE:
                eb = apply_sum_to_zero(EffectBlock(basis(x_ref), K, kind="pspline"))
                T, constraint, K = eb.constraint.transform, eb.constraint.constraint, eb.K
            lift = (lambda B: B) if T is None else (lambda B, T=T: B @ T)
            blk = ModelBlock(
                name, short, kind.value, K.shape[0], K,
                design_long=DenseDesign(lift(basis(x_long))) if on_long else None,
                design_aug=DenseDesign(lift(basis(x_aug))) if on_aug else None,
                a=a, b=b, term=term, transform=T, basis=basis, constraint=constraint,
                rank=term.knots - term.diff_order, reference=np.asarray(x_ref, dtype=float), bounds=bounds,
            )
        elif kind is TermKind.MRF:
            graph = maps.get(term.map_ref)
            if graph is None:
                raise ValueError(f"adjacency map {term.map_ref!r} was not provided")
            K = mrf_penalty(graph)
            eb = apply_sum_to_zero(EffectBlock(mrf_design(x_ref, graph), K, kind="mrf"))
            T = eb.constraint.transform

            def region_index(values, graph=graph):
                return np.array([graph.index(v) for v in np.asarray(values, dtype=object).ravel()], dtype=np.intp)

            def basis(values, graph=graph):
                return mrf_design(values, graph)

            blk = ModelBlock(
                name, short, "mrf", T.shape[1], eb.K,
                design_long=IndexDesign(region_index(x_long), np.ones(len(long)), len(graph), T) if on_long else None,
                design_aug=IndexDesign(region_index(x_aug), np.ones(len(pf)), len(graph), T) if on_aug else None,
                a=a, b=b, term=term, transform=T, basis=basis,
                constraint=eb.constraint.constraint, labels=graph.labels,
                rank=len(graph) - graph.n_components(), reference=np.asarray(x_ref, dtype=object),
            )
        elif kind in (TermKind.RANDOM_INTERCEPT, TermKind.RANDOM_SLOPE):
            n = len(ids)
            v_long = np.ones(len(long)) if kind is TermKind.RANDOM_INTERCEPT else np.asarray(x_long, dtype=float)
            v_aug = np.ones(len(pf)) if kind is TermKind.RANDOM_INTERCEPT else np.asarray(x_aug, dtype=float)
            blk = ModelBlock(
                name, short, kind.value, n, np.eye(n),
                design_long=IndexDesign(subj_long, v_long, n),
                design_aug=IndexDesign(subj_aug, v_aug, n),
                a=a, b=b, term=term, rank=n, labels=tuple(ids),
            )
        else:  # pragma: no cover - enum is exhaustive
            raise ValueError(kind)
        blocks.append(blk)

    return JointDesign(
        y=long["y"].to_numpy(),
        blocks=blocks,
        delta=ped.delta,
        offset=ped.offset,
        hyper=hyper,
        alpha_init=spec.association_init,
        sigma2_alpha_init=1.0,
        ped=ped,
        long=long,
        surv=surv,
        subject_ids=ids,
    )
