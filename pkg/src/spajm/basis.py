"""Design and penalty matrices for structured additive effects.

Every effect ``k`` of a predictor is written as ``Z_k @ gamma_k`` with a
Gaussian smoothness prior whose precision is ``K_k / sigma2_k``.  This module
builds ``Z_k`` and ``K_k`` for linear, random, P-spline and Markov random
field effects, reads and writes ``.gra`` adjacency files and implements the
sum-to-zero reparametrisation used to keep smooth effects identifiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "AdjacencyGraph",
    "EffectBlock",
    "SumToZero",
    "apply_sum_to_zero",
    "bspline_basis",
    "bspline_knots",
    "difference_penalty",
    "lattice_graph",
    "matrix_rank",
    "mrf_design",
    "mrf_penalty",
    "random_effect_design",
    "read_gra",
    "write_gra",
]


def matrix_rank(K, rtol=1e-8):
    """Rank of ``K`` from its singular values, relative threshold ``rtol``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.size == 0:
        return 0
    s = np.linalg.svd(K, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


# --------------------------------------------------------------------------
# P-splines
# --------------------------------------------------------------------------


def bspline_knots(lower, upper, num_basis, degree):
    """Equidistant knot vector with ``degree`` boundary knots on each side.

    ``num_basis - degree`` intervals cover ``[lower, upper]``; the full knot
    vector has ``num_basis + degree + 1`` entries.
    """
    n_int = num_basis - degree
    if n_int < 1:
        raise ValueError(f"need at least degree + 1 = {degree + 1} basis functions, got {num_basis}")
    if not upper > lower:
        # degenerate covariate range; widen symmetrically
        lower, upper = lower - 0.5, upper + 0.5
    h = (upper - lower) / n_int
    return lower + h * np.arange(-degree, n_int + degree + 1)


def bspline_basis(x, knots, degree, *, bounds=None):
    """B-spline design matrix with ``knots`` columns.

    Parameters
    ----------
    x : array_like, shape (n,)
        Evaluation points.
    knots : int
        Number of basis functions (columns).
    degree : int
        Spline degree; 0 gives bin indicators, 3 cubic splines.
    bounds : tuple of float, optional
        Covariate range spanned by the interior knots.  Defaults to
        ``(min(x), max(x))``.

    Returns
    -------
    numpy.ndarray, shape (n, knots)
    """
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if knots < degree + 2:
        raise ValueError(f"knots must be >= degree + 2 (got knots={knots}, degree={degree})")
    if bounds is None:
        if x.size == 0:
            raise ValueError("bounds required for empty x")
        bounds = (x.min(), x.max())
    t = bspline_knots(bounds[0], bounds[1], knots, degree)
    return _design_from_knots(x, t, degree)


def _design_from_knots(x, t, degree):
    x = np.asarray(x, dtype=float).ravel()
    n_basis = len(t) - degree - 1
    if x.size == 0:
        return np.zeros((0, n_basis))
    lo, hi = t[degree], t[n_basis]
    if degree == 0:
        # scipy's degree-0 basis drops the right endpoint; bins are closed there
        idx = np.clip(np.searchsorted(t, x, side="right") - 1, 0, n_basis - 1)
        out = np.zeros((x.size, n_basis))
        out[np.arange(x.size), idx] = 1.0
        return out
    inside = (x >= lo) & (x <= hi)
    out = np.zeros((x.size, n_basis))
    if inside.any():
        out[inside] = BSpline.design_matrix(x[inside], t, degree).toarray()
    if (~inside).any():
        # polynomial continuation of the boundary pieces outside the knot range
        eye = np.eye(n_basis)
        out[~inside] = BSpline(t, eye, degree, extrapolate=True)(x[~inside])
    return out


def difference_penalty(num_coef, order):
    """Random-walk penalty ``D'D`` with ``D`` the ``order``-th difference matrix."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if num_coef <= order:
        raise ValueError(f"num_coef ({num_coef}) must exceed the difference order ({order})")
    D = np.diff(np.eye(num_coef), n=order, axis=0)
    return D.T @ D


# --------------------------------------------------------------------------
# Markov random fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AdjacencyGraph:
    """Regions and their neighbourhoods.

    ``neighbors[s]`` holds the indices of the regions adjacent to region
    ``s``.  Adjacency must be symmetric and irreflexive.
    """

    labels: tuple
    neighbors: tuple
    centroids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        labels = tuple(str(lab) for lab in self.labels)
        nbrs = tuple(frozenset(int(r) for r in nb) for nb in self.neighbors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "neighbors", nbrs)
        if len(labels) != len(nbrs):
            raise ValueError("labels and neighbors differ in length")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate region labels")
        S = len(labels)
        for s, nb in enumerate(nbrs):
            for r in nb:
                if not 0 <= r < S:
                    raise ValueError(f"region {labels[s]!r}: neighbour index {r} out of range")
                if r == s:
                    raise ValueError(f"region {labels[s]!r} is listed as its own neighbour")
                if s not in nbrs[r]:
                    raise ValueError(
                        f"asymmetric adjacency: {labels[r]!r} in n({labels[s]!r}) "
                        f"but {labels[s]!r} not in n({labels[r]!r})"
                    )
        if self.centroids is not None:
            c = np.asarray(self.centroids, dtype=float)
            if c.shape != (S, 2):
                raise ValueError("centroids must have shape (S, 2)")
            object.__setattr__(self, "centroids", c)

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self._lookup[str(label)]
        except KeyError:
            raise KeyError(f"region {label!r} not in adjacency graph") from None

    @property
    def _lookup(self):
        lookup = self.__dict__.get("_lookup_cache")
        if lookup is None:
            lookup = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_lookup_cache", lookup)
        return lookup

    def n_components(self):
        seen = np.zeros(len(self), dtype=bool)
        count = 0
        for start in range(len(self)):
            if seen[start]:
                continue
            count += 1
            stack = [start]
            seen[start] = True
            while stack:
                s = stack.pop()
                for r in self.neighbors[s]:
                    if not seen[r]:
                        seen[r] = True
                        stack.append(r)
        return count


def lattice_graph(n_rows=8, n_cols=8, extent=3.0):
    """Rook-adjacency lattice with centroids scaled to ``[-extent, extent]^2``.

    Regions are labelled ``R0 .. R{S-1}`` in row-major order.
    """
    labels, neighbors, centroids = [], [], []
    xs = np.linspace(-extent, extent, n_cols) if n_cols > 1 else np.zeros(1)
    ys = np.linspace(-extent, extent, n_rows) if n_rows > 1 else np.zeros(1)
    for i in range(n_rows):
        for j in range(n_cols):
            s = i * n_cols + j
            labels.append(f"R{s}")
            nb = []
            if i > 0:
                nb.append(s - n_cols)
            if i < n_rows - 1:
                nb.append(s + n_cols)
            if j > 0:
                nb.append(s - 1)
            if j < n_cols - 1:
                nb.append(s + 1)
            neighbors.append(nb)
            centroids.append((xs[j], ys[i]))
    return AdjacencyGraph(tuple(labels), tuple(neighbors), np.array(centroids))


def mrf_penalty(graph):
    """Intrinsic GMRF precision: neighbour counts on the diagonal, -1 for neighbours."""
    S = len(graph)
    K = np.zeros((S, S))
    for s, nb in enumerate(graph.neighbors):
        K[s, s] = len(nb)
        for r in nb:
            K[s, r] = -1.0
    if not np.array_equal(K, K.T):
        raise ValueError("asymmetric adjacency")
    return K


def mrf_design(region_of_row, graph):
    """One-hot incidence matrix mapping rows to regions."""
    labels = [str(r) for r in np.asarray(region_of_row, dtype=object).ravel()]
    Z = np.zeros((len(labels), len(graph)))
    if labels:
        Z[np.arange(len(labels)), [graph.index(lab) for lab in labels]] = 1.0
    return Z


def read_gra(path_or_text):
    """Parse a ``.gra`` adjacency file.

    Layout: the region count ``S`` on the first line, then three lines per
    region holding its label, its neighbour count and the 0-based neighbour
    indices separated by spaces.
    """
    if isinstance(path_or_text, Path) or (
        isinstance(path_or_text, str) and "\n" not in path_or_text
    ):
        text = Path(path_or_text).read_text(encoding="utf-8")
    else:
        text = path_or_text
    lines = text.splitlines()
    try:
        S = int(lines[0].strip())
    except (IndexError, ValueError):
        raise ValueError("line 1: expected the number of regions") from None
    labels, neighbors = [], []
    pos = 1
    for s in range(S):
        if pos + 1 >= len(lines):
            raise ValueError(f"unexpected end of file in region block {s}")
        label = lines[pos].strip()
        try:
            count = int(lines[pos + 1].strip())
        except (IndexError, ValueError):
            raise ValueError(f"line {pos + 2}: expected neighbour count") from None
        nb_line = lines[pos + 2] if pos + 2 < len(lines) else ""
        try:
            nb = [int(tok) for tok in nb_line.split()]
        except ValueError:
            raise ValueError(f"line {pos + 3}: neighbour indices must be integers") from None
        if len(nb) != count:
            raise ValueError(
                f"line {pos + 3}: region {label!r} declares {count} neighbours but lists {len(nb)}"
            )
        labels.append(label)
        neighbors.append(nb)
        pos += 3
    return AdjacencyGraph(tuple(labels), tuple(neighbors))


def write_gra(graph, path=None):
    out = [str(len(graph))]
    for label, nb in zip(graph.labels, graph.neighbors):
        nb = sorted(nb)
        out.extend([label, str(len(nb)), " ".join(str(r) for r in nb)])
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


# --------------------------------------------------------------------------
# Random effects
# --------------------------------------------------------------------------


def random_effect_design(subject_ids, covariate=None, n_subjects=None):
    """Block-diagonal ``diag(u_1, ..., u_n)`` for subject ids in ``1..n``."""
    ids = np.asarray(subject_ids).ravel()
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        if not np.all(np.equal(np.mod(ids, 1), 0)):
            raise ValueError("subject ids must be integers")
        ids = ids.astype(int)
    n = int(ids.max()) if n_subjects is None and ids.size else (n_subjects or 0)
    if ids.size and (ids.min() < 1 or ids.max() > n):
        bad = ids[(ids < 1) | (ids > n)][0]
        raise ValueError(f"unknown subject id {bad}")
    u = np.ones(ids.size) if covariate is None else np.asarray(covariate, dtype=float).ravel()
    if u.size != ids.size:
        raise ValueError("covariate length does not match subject ids")
    Z = np.zeros((ids.size, n))
    Z[np.arange(ids.size), ids - 1] = u
    return Z


# --------------------------------------------------------------------------
# Effect blocks and identifiability
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SumToZero:
    """Reparametrisation ``gamma = transform @ theta`` with ``c' gamma = 0``.

    ``c`` holds the column means of the design, so every effect
    ``Z @ transform @ theta`` averages to zero over the design rows.
    """

    constraint: np.ndarray
    transform: np.ndarray

    def to_original(self, theta):
        return np.asarray(theta) @ self.transform.T

    def to_reduced(self, gamma):
        # transform has orthonormal columns
        return np.asarray(gamma) @ self.transform


@dataclass(frozen=True)
class EffectBlock:
    """One additive effect: design ``Z``, penalty ``K`` and current values."""

    Z: np.ndarray
    K: np.ndarray
    gamma: np.ndarray | None = None
    sigma2_gamma: float = 1.0
    rank_K: int | None = None
    constraint: SumToZero | None = None
    kind: str = "linear"

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if K.shape != (Z.shape[1], Z.shape[1]):
            raise ValueError(f"penalty shape {K.shape} does not match {Z.shape[1]} columns")
        if not np.allclose(K, K.T, atol=1e-12):
            raise ValueError("penalty matrix must be symmetric")
        if self.sigma2_gamma <= 0:
            raise ValueError("sigma2_gamma must be positive")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "K", K)
        if self.gamma is None:
            object.__setattr__(self, "gamma", np.zeros(Z.shape[1]))
        if self.rank_K is None:
            object.__setattr__(self, "rank_K", matrix_rank(K))

    @property
    def effect(self):
        return self.Z @ self.gamma

    def original_gamma(self):
        if self.constraint is None:
            return self.gamma
        return self.constraint.to_original(self.gamma)

    def project_effect(self, f):
        """Least-squares representation of the effect vector ``f`` in this block."""
        coef, *_ = np.linalg.lstsq(self.Z, np.asarray(f, dtype=float), rcond=None)
        return self.Z @ coef


def sum_to_zero_transform(constraint):
    """Orthonormal basis of the null space of ``constraint'``."""
    c = np.asarray(constraint, dtype=float).ravel()
    p = c.size
    Q, _ = np.linalg.qr(c.reshape(-1, 1), mode="complete")
    return Q[:, 1:p]


def apply_sum_to_zero(block):
    """Reparametrise a P-spline or MRF block so its effect sums to zero.

    The returned block has one column fewer; ``block.constraint`` maps
    reduced coefficients back to the original basis.
    """
    if block.constraint is not None:
        return block
    c = block.Z.mean(axis=0) if block.Z.shape[0] else np.ones(block.Z.shape[1])
    if not np.any(c):
        c = np.ones(block.Z.shape[1])
    T = sum_to_zero_transform(c)
    Z = block.Z @ T
    if Z.shape[0]:
        # remove the rounding residue so the effect mean is zero to machine precision
        Z = Z - Z.mean(axis=0)
    K = T.T @ block.K @ T
    K = 0.5 * (K + K.T)
    return replace(
        block,
        Z=Z,
        K=K,
        gamma=np.asarray(block.gamma, dtype=float) @ T,
        rank_K=matrix_rank(K),
        constraint=SumToZero(c, T),
    )
