"""Longitudinal and survival datasets: validation and CSV round trips.

Both datasets are plain :class:`pandas.DataFrame` objects.  Longitudinal data
carries the columns ``id, time, y`` followed by covariates; survival data
carries ``id, T, delta`` followed by time-constant covariates.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

LONG_COLUMNS = ("id", "time", "y")
SURV_COLUMNS = ("id", "T", "delta")
FLOAT_FORMAT = "%.17g"


class DataError(ValueError):
    """Raised when a dataset violates its structural invariants."""


def _require(frame, columns, what):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{what} data lacks required column(s): {', '.join(missing)}")


def check_survival(surv):
    """Validate survival data and return a copy sorted by subject id."""
    if not isinstance(surv, pd.DataFrame):
        surv = pd.DataFrame(surv)
    _require(surv, SURV_COLUMNS, "survival")
    out = surv.copy()
    if out["id"].duplicated().any():
        dup = out.loc[out["id"].duplicated(), "id"].iloc[0]
        raise DataError(f"subject {dup!r} appears more than once in survival data")
    T = pd.to_numeric(out["T"], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(T)) or np.any(T <= 0):
        raise DataError("event/censoring times T must be finite and > 0")
    delta = pd.to_numeric(out["delta"], errors="coerce").to_numpy()
    if not np.all(np.isin(delta, (0, 1))):
        raise DataError("event indicator delta must be 0 or 1")
    out["T"] = T
    out["delta"] = delta.astype(int)
    return out.sort_values("id", kind="stable").reset_index(drop=True)


def check_longitudinal(long, surv=None):
    """Validate longitudinal data, optionally against survival data.

    With ``surv`` given, every subject must appear in both datasets, have at
    least one measurement, and all measurement times must lie in ``[0, T_i]``.
    """
    if not isinstance(long, pd.DataFrame):
        long = pd.DataFrame(long)
    _require(long, LONG_COLUMNS, "longitudinal")
    out = long.copy()
    out["time"] = pd.to_numeric(out["time"], errors="coerce").astype(float)
    out["y"] = pd.to_numeric(out["y"], errors="coerce").astype(float)
    if not np.all(np.isfinite(out["time"])) or np.any(out["time"] < 0):
        raise DataError("observation times must be finite and >= 0")
    if not np.all(np.isfinite(out["y"])):
        raise DataError("longitudinal outcome y contains non-finite values")
    out = out.sort_values(["id", "time"], kind="stable").reset_index(drop=True)
    if surv is not None:
        surv_ids = set(surv["id"])
        long_ids = set(out["id"])
        if long_ids - surv_ids:
            raise DataError(f"subject(s) {sorted(long_ids - surv_ids)[:5]} missing from survival data")
        if surv_ids - long_ids:
            raise DataError(f"subject(s) {sorted(surv_ids - long_ids)[:5]} have no longitudinal rows")
        T = out["id"].map(surv.set_index("id")["T"]).to_numpy()
        late = out["time"].to_numpy() > T + 1e-12
        if late.any():
            bad = out.loc[late, "id"].iloc[0]
            raise DataError(f"subject {bad!r} has measurements after its event/censoring time")
    return out


def covariate_columns(frame, reserved):
    return [c for c in frame.columns if c not in reserved]


def read_longitudinal_csv(path):
    return check_longitudinal(pd.read_csv(path, float_precision="round_trip"))


def read_survival_csv(path):
    return check_survival(pd.read_csv(path, float_precision="round_trip"))


def write_csv(frame, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
