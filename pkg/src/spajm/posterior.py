"""Posterior summaries and scoring against a known truth."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import write_csv

MIN_DRAWS = 100


class DegenerateIntervalWarning(UserWarning):
    """All retained draws are identical, so the interval has zero width."""


def hdi(draws, level=0.95):
    """Highest-density interval from the shortest window of sorted draws.

    The window holds ``ceil(level * m)`` of the ``m`` draws; among windows
    of equal width the one with the lowest start wins.

    Parameters
    ----------
    draws : array_like
        At least 100 posterior draws.
    level : float
        Probability mass in ``(0, 1]``.

    Returns
    -------
    (float, float)
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    m = x.size
    if m < MIN_DRAWS:
        raise ValueError(f"hdi needs at least {MIN_DRAWS} draws, got {m}")
    if not 0 < level <= 1:
        raise ValueError("level must lie in (0, 1]")
    if not np.all(np.isfinite(x)):
        raise ValueError("draws contain non-finite values")
    # tolerance keeps e.g. 0.95 * 100 from rounding up to 96
    k = max(1, min(m, math.ceil(level * m - 1e-9)))
    widths = x[k - 1 :] - x[: m - k + 1]
    i = int(np.argmin(widths))
    lo, hi = float(x[i]), float(x[i + k - 1])
    if lo == hi:
        warnings.warn("degenerate interval: draws are a point mass", DegenerateIntervalWarning, stacklevel=2)
    return lo, hi


def batch_means_se(draws, n_batches=None):
    """Monte-Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(draws, dtype=float).ravel()
    m = x.size
    if m < 2:
        return float("nan")
    b = n_batches or max(2, int(math.isqrt(m)))
    size = m // b
    if size < 1:
        return float(np.std(x, ddof=1) / math.sqrt(m))
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(b))


@dataclass
class PosteriorSummary:
    """Scalar table plus pointwise summaries of function-valued effects.

    ``scalars`` has columns ``parameter, mean, hdi_lo, hdi_hi, mcse``.
    ``functions`` maps a block name to a frame with ``x, mean, hdi_lo,
    hdi_hi``; ``references`` keeps the covariate values whose mean the
    effect is centred on (``None`` for uncentred effects).
    """

    scalars: pd.DataFrame
    functions: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    level: float = 0.95

    def scalar(self, name):
        row = self.scalars.loc[self.scalars["parameter"] == name]
        if row.empty:
            raise KeyError(name)
        return row.iloc[0]

    def to_csv(self, path, functions_path=None):
        write_csv(self.scalars[["parameter", "mean", "hdi_lo", "hdi_hi"]], path)
        if functions_path is not None and self.functions:
            parts = [f.assign(effect=name)[["effect", "x", "mean", "hdi_lo", "hdi_hi"]] for name, f in self.functions.items()]
            write_csv(pd.concat(parts, ignore_index=True), functions_path)


def _interval_rows(values, level):
    """Mean and HDI of every column of a draws-by-points array."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateIntervalWarning)
        bounds = np.array([hdi(values[:, j], level) for j in range(values.shape[1])]).reshape(-1, 2)
    return values.mean(axis=0), bounds[:, 0], bounds[:, 1]


def default_grid(block, n_grid=100):
    """Evaluation points of a block's effect function."""
    if block.kind == "mrf":
        return np.asarray(block.labels, dtype=object)
    if block.kind in ("random_intercept", "random_slope"):
        return np.asarray(block.labels)
    if block.bounds is None:
        return None
    return np.linspace(block.bounds[0], block.bounds[1], n_grid)


def summarize(chain, blocks=(), grid=None, level=0.95, n_grid=100):
    """Summarize a chain's retained draws.

    Every draws column gets a posterior mean, HDI and batch-means MC error.
    Smooth, spatial and baseline blocks are additionally evaluated on a grid
    (``grid`` may map block names to custom points) after mapping the
    coefficients back to the original basis; random effects are reported
    per subject.
    """
    draws = chain.draws if hasattr(chain, "draws") else chain
    grid = grid or {}
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateIntervalWarning)
        for col in draws.columns:
            v = draws[col].to_numpy()
            lo, hi = hdi(v, level)
            rows.append((col, float(v.mean()), lo, hi, batch_means_se(v)))
    scalars = pd.DataFrame(rows, columns=["parameter", "mean", "hdi_lo", "hdi_hi", "mcse"])

    functions, references = {}, {}
    for b in blocks:
        if b.kind not in ("pspline", "baseline_pspline", "mrf", "random_intercept", "random_slope"):
            continue
        cols = [f"{b.name}.{i}" for i in range(b.original_dim)]
        coef = draws[cols].to_numpy()
        pts = grid.get(b.name, default_grid(b, n_grid))
        if b.kind in ("random_intercept", "random_slope"):
            values = coef
        else:
            values = coef @ np.asarray(b.evaluate(pts)).T
        mean, lo, hi = _interval_rows(values, level)
        functions[b.name] = pd.DataFrame({"x": pts, "mean": mean, "hdi_lo": lo, "hdi_hi": hi})
        references[b.name] = b.reference if b.kind in ("pspline", "mrf") else None
    return PosteriorSummary(scalars, functions, references, level)


def center_truth(values_grid, values_reference):
    """Shift true function values so they average to zero on the reference rows."""
    return np.asarray(values_grid, dtype=float) - float(np.mean(values_reference))


def score_against_truth(summary, truth):
    """Bias, MSE and HDI coverage of each target.

    ``truth`` maps a scalar parameter name to its true value, or a function
    block name to its true values on that block's grid (already centred
    where the estimate is centred).  For functions the metrics average over
    the grid: ``covered`` is then the pointwise coverage rate and
    ``abs_bias`` the mean absolute pointwise bias.

    Returns
    -------
    DataFrame
        Columns ``target, mse, bias, abs_bias, covered``.
    """
    out = []
    for target, value in truth.items():
        if target in summary.functions:
            f = summary.functions[target]
            tv = np.asarray(value, dtype=float).ravel()
            if tv.size != len(f):
                raise ValueError(f"{target}: truth has {tv.size} points, summary has {len(f)}")
            est, lo, hi = f["mean"].to_numpy(), f["hdi_lo"].to_numpy(), f["hdi_hi"].to_numpy()
        else:
            try:
                row = summary.scalar(target)
            except KeyError:
                raise ValueError(f"no posterior summary for target {target!r}") from None
            if np.ndim(value) != 0:
                raise ValueError(f"{target}: scalar parameter needs a scalar truth")
            tv = np.array([float(value)])
            est, lo, hi = np.array([row["mean"]]), np.array([row["hdi_lo"]]), np.array([row["hdi_hi"]])
        err = est - tv
        cov = (lo <= tv) & (tv <= hi)
        out.append(
            {
                "target": target,
                "mse": float(np.mean(err**2)),
                "bias": float(np.mean(err)),
                "abs_bias": float(np.mean(np.abs(err))),
                "covered": float(np.mean(cov)),
            }
        )
    return pd.DataFrame(out, columns=["target", "mse", "bias", "abs_bias", "covered"])
