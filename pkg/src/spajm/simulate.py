"""Synthetic joint longitudinal and survival studies.

Each subject gets its own random stream ``SeedSequence([seed, i])`` so that
subject-level generation is reproducible regardless of order.  The spatial
effect sits in the shared (setting 1), survival (setting 2) or longitudinal
(setting 3) predictor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import integrate, optimize
from scipy.stats import norm

from .basis import AdjacencyGraph, lattice_graph
from .config import PredictorSpec, TermKind, TermSpec
from .data import write_csv

SETTING_PREDICTOR = {1: "eta_ls", 2: "eta_s", 3: "eta_l"}
QUAD_TOL = 1e-8
ROOT_TOL = 1e-10


def f1(x):
    """``0.5 x + 15 phi(2 (x - 0.2)) - phi(x + 0.4)`` with ``phi`` the normal density."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x + 15.0 * norm.pdf(2.0 * (x - 0.2)) - norm.pdf(x + 0.4)


def f2(x):
    return np.sin(np.asarray(x, dtype=float))


def f_geo(region, graph):
    """``sin(c_x) cos(0.5 c_y)`` at the centroid of each region."""
    if graph.centroids is None:
        raise ValueError("map has no centroids")
    idx = np.array([graph.index(r) for r in np.atleast_1d(np.asarray(region, dtype=object))], dtype=np.intp)
    c = np.asarray(graph.centroids)[idx]
    return np.sin(c[:, 0]) * np.cos(0.5 * c[:, 1])


@dataclass
class SimulationConfig:
    """Generating parameters of a simulated study.

    Defaults reproduce the published design: 200 subjects with 6 visits,
    ``alpha = -0.3``, ``sigma2_eps = 0.5``, random-effect variances 2 and a
    Weibull baseline hazard ``p q t^(q-1)`` with ``p = 0.4``, ``q = 1.5``.
    """

    n: int = 200
    ni: int = 6
    alpha: float = -0.3
    sigma2_eps: float = 0.5
    sigma2_b0: float = 2.0
    sigma2_b1: float = 2.0
    weibull_scale: float = 0.4
    weibull_shape: float = 1.5
    setting: int = 1
    map: AdjacencyGraph = field(default_factory=lattice_graph)
    seed: int = 1
    horizon: float = 1.0
    censor_fraction: float = 0.5

    def __post_init__(self):
        if self.setting not in SETTING_PREDICTOR:
            raise ValueError("setting must be 1, 2 or 3")
        if self.n < 1 or self.ni < 1:
            raise ValueError("n and ni must be positive")
        if self.sigma2_eps < 0 or self.sigma2_b0 < 0 or self.sigma2_b1 < 0:
            raise ValueError("variances must be non-negative")
        if self.weibull_scale <= 0 or self.weibull_shape <= 0:
            raise ValueError("Weibull scale and shape must be positive")
        if not 0 <= self.censor_fraction <= 1:
            raise ValueError("censor_fraction must lie in [0, 1]")
        if self.map.centroids is None:
            raise ValueError("simulation map needs centroids")

    @property
    def geo_predictor(self):
        return SETTING_PREDICTOR[self.setting]

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "map"}
        d["map"] = {"labels": list(self.map.labels), "centroids": np.asarray(self.map.centroids).tolist()}
        return d


@dataclass
class SubjectState:
    """Piecewise description of one subject's hazard.

    On ``[breaks[k], breaks[k+1])`` the shared predictor is
    ``level[k] + slope * t``; ``eta_s`` is constant.
    """

    eta_s: float
    breaks: np.ndarray
    level: np.ndarray
    slope: float

    def eta_ls(self, t):
        k = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, len(self.level) - 1)
        return self.level[k] + self.slope * np.asarray(t)


def _segment_hazard(config, state, k):
    p, q, a = config.weibull_scale, config.weibull_shape, config.alpha
    c = state.eta_s + a * state.level[k]
    s = a * state.slope
    return lambda t: p * q * t ** (q - 1.0) * math.exp(c + s * t), c, s


def _segment_cumhaz(config, state, k, lo, hi):
    h, c, s = _segment_hazard(config, state, k)
    if s == 0.0:
        p, q = config.weibull_scale, config.weibull_shape
        return p * math.exp(c) * (hi**q - lo**q), True
    val, err = integrate.quad(h, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)
    return val, err <= QUAD_TOL * max(1.0, abs(val))


class IntegrationError(RuntimeError):
    pass


def cumulative_hazard(config, state, t):
    """``Lambda(t)`` integrated segment by segment."""
    total = 0.0
    edges = np.append(state.breaks, np.inf)
    for k in range(len(state.level)):
        lo, hi = edges[k], min(edges[k + 1], t)
        if hi <= lo:
            break
        val, ok = _segment_cumhaz(config, state, k, lo, hi)
        if not ok:
            raise IntegrationError("cumulative hazard quadrature did not converge")
        total += val
    return total


def simulate_event_time(config, state, rng):
    """Draw ``(T*, T, delta)`` by inverting the cumulative hazard.

    ``T*`` solves ``Lambda(T*) = E`` with ``E ~ Exp(1)``; ``T = min(T*,
    horizon)`` and ``delta = 1`` iff ``T* <= horizon``.  ``T*`` is ``inf``
    when the event would happen after the horizon (it is never needed).
    Raises :class:`IntegrationError` when quadrature fails.
    """
    E = rng.exponential()
    H = config.horizon
    edges = np.append(state.breaks, np.inf)
    acc = 0.0
    for k in range(len(state.level)):
        lo, hi = edges[k], min(edges[k + 1], H)
        if hi <= lo:
            break
        val, ok = _segment_cumhaz(config, state, k, lo, hi)
        if not ok:
            raise IntegrationError("cumulative hazard quadrature did not converge")
        if acc + val >= E:
            target = E - acc
            _, c, s = _segment_hazard(config, state, k)
            if s == 0.0:
                p, q = config.weibull_scale, config.weibull_shape
                t_star = (lo**q + target / (p * math.exp(c))) ** (1.0 / q)
            else:
                def g(t):
                    v, ok_ = _segment_cumhaz(config, state, k, lo, t)
                    if not ok_:
                        raise IntegrationError("cumulative hazard quadrature did not converge")
                    return v - target

                t_star = optimize.brentq(g, lo, hi, xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps)
            t_star = min(max(t_star, lo), hi)
            return t_star, t_star, 1
        acc += val
    return math.inf, H, 0


def _uniform_times(rng, ni):
    # the first visit is at baseline so every subject keeps at least one row
    return np.concatenate([[0.0], np.sort(rng.uniform(0.0, 1.0, ni - 1))])


def simulate_subject_trajectory(config, rng, covariates=None):
    """Draw one subject's visits, covariates, random effects and outcomes.

    ``covariates`` overrides any drawn quantity by name (``x_l1``, ``b0``,
    ``region``, ``times``, ...), which makes reduced cases easy to build.
    Returns a dict with the longitudinal rows (``frame``), the subject's
    constant quantities and the :class:`SubjectState` of its hazard.
    """
    cov = dict(covariates or {})
    ni = config.ni
    times = np.asarray(cov["times"] if "times" in cov else _uniform_times(rng, ni), dtype=float)
    ni = times.size

    def draw(name, size=None):
        if name in cov:
            if size is None:
                return float(cov[name])
            return np.broadcast_to(np.asarray(cov[name], dtype=float), (size,)).copy()
        return rng.uniform(-1.0, 1.0, size) if size is not None else float(rng.uniform(-1.0, 1.0))

    x_l1, x_l2, x_ls3 = draw("x_l1", ni), draw("x_l2", ni), draw("x_ls3", ni)
    x_ls1, x_ls2, x_s1, x_s2 = draw("x_ls1"), draw("x_ls2"), draw("x_s1"), draw("x_s2")
    b0 = float(cov["b0"]) if "b0" in cov else float(rng.normal(0.0, math.sqrt(config.sigma2_b0)))
    b1 = float(cov["b1"]) if "b1" in cov else float(rng.normal(0.0, math.sqrt(config.sigma2_b1)))
    labels = config.map.labels
    region = cov["region"] if "region" in cov else labels[int(rng.integers(len(labels)))]
    geo = float(f_geo([region], config.map)[0])
    where = config.geo_predictor

    eta_l = 0.5 * x_l1 + f1(x_l2) + (geo if where == "eta_l" else 0.0)
    level = 0.9 * x_ls1 - 0.5 * float(f2(x_ls2)) - 0.5 * x_ls3 + b0 + (geo if where == "eta_ls" else 0.0)
    slope = 0.4 + b1
    eta_ls = level + slope * times
    eta_s = 0.1 * x_s1 + 0.5 * float(f2(x_s2)) + (geo if where == "eta_s" else 0.0)
    eps = cov["eps"] if "eps" in cov else rng.normal(0.0, math.sqrt(config.sigma2_eps), ni)
    y = eta_l + eta_ls + eps

    frame = pd.DataFrame(
        {
            "time": times,
            "y": y,
            "x_l1": x_l1,
            "x_l2": x_l2,
            "x_ls1": np.full(ni, x_ls1),
            "x_ls2": np.full(ni, x_ls2),
            "x_ls3": x_ls3,
            "eta_l": eta_l,
            "eta_ls": eta_ls,
        }
    )
    state = SubjectState(eta_s=eta_s, breaks=times.copy(), level=np.asarray(level, dtype=float), slope=slope)
    return {
        "frame": frame,
        "x_s1": x_s1,
        "x_s2": x_s2,
        "b0": b0,
        "b1": b1,
        "region": region,
        "f_geo": geo,
        "eta_s": eta_s,
        "state": state,
    }


@dataclass
class SimulatedStudy:
    long: pd.DataFrame
    surv: pd.DataFrame
    truth: dict

    def write(self, directory):
        directory = Path(directory)
        write_csv(self.long, directory / "long.csv")
        write_csv(self.surv, directory / "surv.csv")
        (directory / "truth.json").write_text(json.dumps(self.truth, indent=2) + "\n")


def simulate_study(config):
    """Simulate a full study; returns a :class:`SimulatedStudy`.

    Longitudinal rows after a subject's (possibly censored) time ``T_i`` are
    dropped.  The region column goes with the predictor that carries the
    spatial effect: survival data in setting 2, longitudinal data otherwise.
    """
    long_parts, rows, subjects = [], [], []
    redraws = 0
    for i in range(1, config.n + 1):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, i]))
        while True:
            sub = simulate_subject_trajectory(config, rng)
            try:
                t_star, T, d = simulate_event_time(config, sub["state"], rng)
                break
            except IntegrationError:
                redraws += 1
        sub["T_star"], sub["T"], sub["delta"] = t_star, T, d
        subjects.append(sub)

    # extra uniform censoring for a random share of the censored subjects
    crng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    censored = [k for k, s in enumerate(subjects) if s["delta"] == 0]
    n_pick = int(round(config.censor_fraction * len(censored)))
    picked = crng.choice(len(censored), size=n_pick, replace=False) if n_pick else []
    for k in picked:
        s = subjects[censored[k]]
        s["T"] = float(min(s["T"], crng.uniform(0.0, config.horizon)))
        s["extra_censored"] = True

    geo_in_surv = config.setting == 2
    for i, s in enumerate(subjects, start=1):
        f = s["frame"]
        f = f[f["time"] <= s["T"]].copy()
        f.insert(0, "id", i)
        if not geo_in_surv:
            f["region"] = s["region"]
        long_parts.append(f)
        row = {"id": i, "T": s["T"], "delta": s["delta"], "x_s1": s["x_s1"], "x_s2": s["x_s2"]}
        if geo_in_surv:
            row["region"] = s["region"]
        rows.append(row)

    long_full = pd.concat(long_parts, ignore_index=True)
    long = long_full.drop(columns=["eta_l", "eta_ls"])
    surv = pd.DataFrame(rows)
    truth = {
        "config": config.to_dict(),
        "geo_predictor": config.geo_predictor,
        "coefficients": {
            "eta_l": {"x_l1": 0.5, "x_l2": "f1"},
            "eta_ls": {"x_ls1": 0.9, "x_ls2": "-0.5*f2", "x_ls3": -0.5, "t": 0.4},
            "eta_s": {"x_s1": 0.1, "x_s2": "0.5*f2"},
            "alpha": config.alpha,
            "sigma2_eps": config.sigma2_eps,
            "sigma2_b0": config.sigma2_b0,
            "sigma2_b1": config.sigma2_b1,
            "weibull_scale": config.weibull_scale,
            "weibull_shape": config.weibull_shape,
        },
        "f_geo": dict(zip(config.map.labels, f_geo(list(config.map.labels), config.map).tolist())),
        "subjects": {
            "id": list(range(1, config.n + 1)),
            "b0": [s["b0"] for s in subjects],
            "b1": [s["b1"] for s in subjects],
            "region": [s["region"] for s in subjects],
            "eta_s": [s["eta_s"] for s in subjects],
            "T_star": [None if math.isinf(s["T_star"]) else s["T_star"] for s in subjects],
        },
        "eta_long": {
            "eta_l": long_full["eta_l"].tolist(),
            "eta_ls": long_full["eta_ls"].tolist(),
        },
        "redraws": redraws,
        "event_fraction": float(np.mean([s["delta"] for s in subjects])),
    }
    return SimulatedStudy(long, surv, truth)


def study_model_spec(setting, *, knots=10, degree=3, diff_order=2, map_ref="grid"):
    """The joint model that matches the generating design of ``setting``."""
    ps = dict(knots=knots, degree=degree, diff_order=diff_order)
    geo = TermSpec(TermKind.MRF, "region", map_ref=map_ref)
    eta_l = [TermSpec(TermKind.LINEAR, "x_l1"), TermSpec(TermKind.PSPLINE, "x_l2", **ps)]
    eta_ls = [
        TermSpec(TermKind.LINEAR, "x_ls1"),
        TermSpec(TermKind.PSPLINE, "x_ls2", **ps),
        TermSpec(TermKind.LINEAR, "x_ls3"),
        TermSpec(TermKind.LINEAR, "t"),
        TermSpec(TermKind.RANDOM_INTERCEPT),
        TermSpec(TermKind.RANDOM_SLOPE, "t"),
    ]
    eta_s = [
        TermSpec(TermKind.LINEAR, "x_s1"),
        TermSpec(TermKind.PSPLINE, "x_s2", **ps),
        TermSpec(TermKind.BASELINE_PSPLINE, **ps),
    ]
    {1: eta_ls, 2: eta_s, 3: eta_l}[setting].append(geo)
    return PredictorSpec(eta_l=eta_l, eta_ls=eta_ls, eta_s=eta_s)


def study_truth(truth, summary):
    """Targets of a simulated study aligned with a posterior summary.

    Scalars map to their generating values.  Smooth and spatial effects are
    evaluated on the summary grid and centred over the same reference rows
    as the estimate; random effects are listed in subject order.
    """
    coefs = truth["coefficients"]
    graph = AdjacencyGraph(
        labels=tuple(truth["config"]["map"]["labels"]),
        neighbors=tuple(frozenset() for _ in truth["config"]["map"]["labels"]),
        centroids=np.asarray(truth["config"]["map"]["centroids"]),
    )
    # linear coefficients are the single column of their block
    scalars = {
        "alpha": coefs["alpha"],
        "sigma2_eps": coefs["sigma2_eps"],
        "l.linear_x_l1.0": 0.5,
        "ls.linear_x_ls1.0": 0.9,
        "ls.linear_x_ls3.0": -0.5,
        "ls.linear_t.0": 0.4,
        "s.linear_x_s1.0": 0.1,
    }
    smooth = {
        "l.pspline_x_l2": f1,
        "ls.pspline_x_ls2": lambda x: -0.5 * f2(x),
        "s.pspline_x_s2": lambda x: 0.5 * f2(x),
    }
    out = {k: v for k, v in scalars.items() if k in set(summary.scalars["parameter"])}
    for name, frame in summary.functions.items():
        ref = summary.references.get(name)
        if name in smooth:
            x = frame["x"].to_numpy(dtype=float)
            out[name] = smooth[name](x) - np.mean(smooth[name](np.asarray(ref, dtype=float)))
        elif name.endswith(".mrf_region"):
            out[name] = f_geo(frame["x"].to_numpy(), graph) - np.mean(f_geo(ref, graph))
        elif name == "ls.random_intercept":
            out[name] = np.asarray(truth["subjects"]["b0"])
        elif name == "ls.random_slope_t":
            out[name] = np.asarray(truth["subjects"]["b1"])
    return out
