"""Piecewise-exponential data (PED) augmentation.

A survival record ``(T_i, delta_i)`` is split at cut points
``0 = kappa_0 < ... < kappa_J`` into one row per entered interval.  Each row
carries the log exposure time as offset and an event count that is 1 only in
the interval where the event happened, so a Poisson likelihood on the rows
reproduces the piecewise-exponential survival likelihood.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import (
    LONG_COLUMNS,
    SURV_COLUMNS,
    DataError,
    check_longitudinal,
    check_survival,
    covariate_columns,
    write_csv,
)

PED_COLUMNS = ("id", "j", "kappa_lo", "kappa_hi", "offset", "delta")


@dataclass
class AugmentedDataset:
    """Interval-split Poisson representation of survival data.

    ``frame`` holds the columns ``id, j, kappa_lo, kappa_hi, offset, delta``
    followed by the carried-forward covariates, plus the interval exit time
    ``t_exit = min(T_i, kappa_hi)``.
    """

    frame: pd.DataFrame
    cuts: np.ndarray
    covariates: list = field(default_factory=list)
    backfilled: list = field(default_factory=list)

    def __len__(self):
        return len(self.frame)

    @property
    def offset(self):
        return self.frame["offset"].to_numpy()

    @property
    def delta(self):
        return self.frame["delta"].to_numpy()

    def evaluation_times(self, point="end"):
        """Time at which time-varying terms are evaluated on each row."""
        if point == "end":
            return self.frame["kappa_hi"].to_numpy()
        if point == "mid":
            f = self.frame
            return 0.5 * (f["kappa_lo"].to_numpy() + f["t_exit"].to_numpy())
        raise ValueError(f"unknown evaluation point {point!r}; use 'end' or 'mid'")

    def collapse(self):
        """Recover ``(id, T, delta)`` per subject."""
        f = self.frame
        last = f.groupby("id", sort=False).tail(1)
        return pd.DataFrame(
            {
                "id": last["id"].to_numpy(),
                "T": last["t_exit"].to_numpy(),
                "delta": f.groupby("id", sort=False)["delta"].sum().to_numpy(),
            }
        )

    def to_csv(self, path):
        write_csv(self.frame[list(PED_COLUMNS) + self.covariates], path)


def make_cuts(surv, strategy="event_times", extra=None):
    """Interval boundaries for augmentation.

    Parameters
    ----------
    surv : DataFrame
        Survival data with ``T`` and ``delta``.
    strategy : {"event_times"} or ("quantiles", J)
        ``"event_times"`` places a boundary at every distinct event time;
        ``("quantiles", J)`` uses the ``J`` equiprobable quantiles of ``T``.
        The string ``"quantiles:J"`` is accepted as well.
    extra : array_like, optional
        Additional boundaries (e.g. measurement times) merged in.  Values
        outside ``(0, max T]`` are ignored.

    Returns
    -------
    numpy.ndarray
        Strictly increasing cuts starting at 0 and ending at ``max(T)``.
    """
    surv = check_survival(surv)
    if len(surv) == 0:
        raise DataError("survival data is empty")
    T = surv["T"].to_numpy()
    t_max = T.max()
    if isinstance(strategy, str) and strategy.startswith("quantiles"):
        _, _, j = strategy.partition(":")
        strategy = ("quantiles", int(j) if j else 10)
    if strategy == "event_times":
        inner = np.unique(T[surv["delta"].to_numpy() == 1])
    elif isinstance(strategy, tuple) and strategy[0] == "quantiles":
        J = int(strategy[1])
        if J < 1:
            raise ValueError("number of quantile intervals J must be >= 1")
        inner = np.quantile(T, np.arange(1, J + 1) / J)
    else:
        raise ValueError(f"unknown cut strategy {strategy!r}")
    pieces = [np.zeros(1), inner, [t_max]]
    if extra is not None:
        pieces.append(np.asarray(extra, dtype=float).ravel())
    cuts = np.unique(np.concatenate(pieces))
    return cuts[(cuts >= 0) & (cuts <= t_max)]


def augment(surv, long=None, cuts=None, *, subject_splits=False, fill="backward"):
    """Split survival records into piecewise-exponential rows.

    Longitudinal covariates are carried forward from the last measurement at
    or before each interval's start.  ``subject_splits=True`` additionally
    splits every subject at its own measurement times, which keeps
    time-varying covariates exact without inflating every subject's rows
    with everyone else's measurement times.

    ``fill`` decides what happens when an interval starts before a subject's
    first measurement: ``"backward"`` uses the first measurement, ``"drop"``
    removes the subject, ``"raise"`` raises :class:`DataError`.
    """
    surv = check_survival(surv)
    if cuts is None:
        cuts = make_cuts(surv)
    cuts = np.asarray(cuts, dtype=float)
    if cuts[0] != 0 or np.any(np.diff(cuts) <= 0):
        raise ValueError("cuts must start at 0 and be strictly increasing")
    if cuts[-1] < surv["T"].max():
        raise ValueError("cuts do not cover the largest event/censoring time")
    if fill not in ("backward", "drop", "raise"):
        raise ValueError("fill must be 'backward', 'drop' or 'raise'")

    base_cols = covariate_columns(surv, SURV_COLUMNS)
    long_cols = []
    if long is not None:
        long = check_longitudinal(long)
        long_cols = [c for c in covariate_columns(long, LONG_COLUMNS) if c not in base_cols]
        groups = {key: g for key, g in long.groupby("id", sort=False)}
    else:
        groups = {}

    records = []
    backfilled = []
    for row in surv.to_dict("records"):
        sid, T_i, d_i = row["id"], float(row["T"]), int(row["delta"])
        g = groups.get(sid)
        sub_cuts = cuts
        if subject_splits and g is not None:
            own = g["time"].to_numpy()
            sub_cuts = np.union1d(cuts, own[(own > 0) & (own < T_i)])
        # rows for every interval with kappa_{j-1} < T_i; the tie T_i = kappa_j closes at j
        n_int = int(np.searchsorted(sub_cuts, T_i, side="left"))
        lo = sub_cuts[:n_int]
        hi = sub_cuts[1 : n_int + 1]
        exit_ = np.minimum(hi, T_i)
        rec = {
            "id": np.repeat(sid, n_int),
            "j": np.arange(1, n_int + 1),
            "kappa_lo": lo,
            "kappa_hi": hi,
            "offset": np.log(exit_ - lo),
            "delta": np.zeros(n_int, dtype=int),
            "t_exit": exit_,
        }
        rec["delta"][-1] = d_i
        for c in base_cols:
            rec[c] = np.repeat(row[c], n_int)
        if long_cols:
            if g is None:
                raise DataError(f"subject {sid!r} has no longitudinal rows")
            times = g["time"].to_numpy()
            pos = np.searchsorted(times, lo, side="right") - 1
            if np.any(pos < 0):
                if fill == "raise":
                    raise DataError(f"subject {sid!r}: covariates needed before the first measurement")
                if fill == "drop":
                    backfilled.append(sid)
                    continue
                backfilled.append(sid)
                pos = np.maximum(pos, 0)
            for c in long_cols:
                rec[c] = g[c].to_numpy()[pos]
        records.append(pd.DataFrame(rec))

    if backfilled:
        action = "dropped" if fill == "drop" else "back-filled from the first measurement"
        warnings.warn(
            f"{len(backfilled)} subject(s) needed covariates before their first measurement; {action}",
            stacklevel=2,
        )
    cols = list(PED_COLUMNS) + base_cols + long_cols + ["t_exit"]
    frame = pd.concat(records, ignore_index=True) if records else pd.DataFrame(columns=cols)
    frame = frame[cols]
    return AugmentedDataset(frame, cuts, base_cols + long_cols, backfilled)


def read_ped_csv(path, cuts=None):
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in PED_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"PED file lacks column(s): {', '.join(missing)}")
    frame["t_exit"] = frame["kappa_lo"] + np.exp(frame["offset"])
    covs = [c for c in frame.columns if c not in PED_COLUMNS and c != "t_exit"]
    if cuts is None:
        cuts = np.union1d(frame["kappa_lo"].to_numpy(), frame["kappa_hi"].to_numpy())
    return AugmentedDataset(frame, np.asarray(cuts), covs)


def interval_exposures(T, cuts):
    """Exposure of each subject in each interval, shape ``(n, J)``."""
    T = np.asarray(T, dtype=float).reshape(-1, 1)
    lo = np.asarray(cuts[:-1]).reshape(1, -1)
    hi = np.asarray(cuts[1:]).reshape(1, -1)
    return np.clip(np.minimum(T, hi) - lo, 0.0, None)


def pe_loglik_oracle(surv, lambda_j, cuts):
    """Exact piecewise-exponential survival log-likelihood.

    ``sum_i [delta_i log lambda_{J(i)} - sum_j lambda_j * exposure_ij]`` with
    ``J(i)`` the interval containing ``T_i``.  Computed directly from the
    survival records, independently of :func:`augment`.
    """
    surv = check_survival(surv)
    lam = np.asarray(lambda_j, dtype=float).ravel()
    cuts = np.asarray(cuts, dtype=float)
    if lam.size != cuts.size - 1:
        raise ValueError(f"need {cuts.size - 1} interval hazards, got {lam.size}")
    if np.any(lam <= 0):
        raise ValueError("hazards must be positive")
    T = surv["T"].to_numpy()
    delta = surv["delta"].to_numpy()
    expo = interval_exposures(T, cuts)
    J_i = np.clip(np.searchsorted(cuts, T, side="left") - 1, 0, lam.size - 1)
    return float(np.sum(delta * np.log(lam[J_i])) - np.sum(expo @ lam))


def ped_poisson_loglik(ped, log_lambda):
    """Poisson log-likelihood of augmented rows under interval hazards (no ``delta!``)."""
    j = np.searchsorted(ped.cuts, ped.frame["kappa_hi"].to_numpy(), side="left") - 1
    eta = np.asarray(log_lambda)[j] + ped.offset
    return float(np.sum(ped.delta * eta - np.exp(eta)))

