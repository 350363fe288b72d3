"""MCMC for structured piecewise additive joint models.

One sweep runs, in order:

1. Gibbs draws for every longitudinal block (conjugate Gaussian);
2. IWLS Metropolis-Hastings for every survival block, including the
   baseline log-hazard spline;
3. IWLS Metropolis-Hastings for every shared block, using the joint
   Gaussian + Poisson likelihood;
4. an IWLS-MH draw of the association ``alpha``;
5. inverse-gamma Gibbs draws for all variances.

The IWLS proposal for a block with design ``Z`` and penalty ``K`` is
``N(P^{-1} (Z'WZ theta + Z'v), P^{-1})`` with ``P = Z'WZ + K / sigma2``,
score ``v`` and working weights ``W`` evaluated at the current state.  The
reverse density is rebuilt at the proposed state, so the acceptance ratio
carries the full asymmetric correction.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .model import JointDesign

LOG_2PI = math.log(2.0 * math.pi)
MU_CLIP = 30.0
WEIGHT_FLOOR = 1e-12


class SamplerError(RuntimeError):
    """Numerical failure inside the sampler."""

    def __init__(self, message, iteration=None, block=None):
        self.iteration = iteration
        self.block = block
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if block is not None:
            where.append(f"block {block}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


@dataclass
class Diagnostics:
    clipped: int = 0
    floored: int = 0
    jittered: int = 0


@dataclass
class ChainState:
    """Parameter values and cached predictors at one point of the chain.

    ``eta_s`` holds the whole survival predictor including the baseline
    log-hazard ``f0``; ``parts`` caches every block's contribution on the
    row sets it touches.
    """

    theta: dict
    sigma2: dict
    alpha: float
    sigma2_alpha: float
    sigma2_eps: float
    eta_l: np.ndarray
    eta_ls_long: np.ndarray
    eta_ls_aug: np.ndarray
    eta_s: np.ndarray
    parts: dict = field(default_factory=dict)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def copy(self):
        return ChainState(
            theta={k: v.copy() for k, v in self.theta.items()},
            sigma2=dict(self.sigma2),
            alpha=self.alpha,
            sigma2_alpha=self.sigma2_alpha,
            sigma2_eps=self.sigma2_eps,
            eta_l=self.eta_l.copy(),
            eta_ls_long=self.eta_ls_long.copy(),
            eta_ls_aug=self.eta_ls_aug.copy(),
            eta_s=self.eta_s.copy(),
            parts={k: tuple(None if p is None else p.copy() for p in v) for k, v in self.parts.items()},
            diagnostics=Diagnostics(**vars(self.diagnostics)),
        )


def initial_state(design: JointDesign, theta=None, alpha=None):
    """Starting values: zero coefficients, unit variances, configured alpha."""
    theta = {} if theta is None else {k: np.asarray(v, dtype=float).copy() for k, v in theta.items()}
    N, n_a = design.y.size, design.delta.size
    state = ChainState(
        theta={},
        sigma2={},
        alpha=float(design.alpha_init if alpha is None else alpha),
        sigma2_alpha=float(design.sigma2_alpha_init),
        sigma2_eps=float(design.sigma2_eps_init),
        eta_l=np.zeros(N),
        eta_ls_long=np.zeros(N),
        eta_ls_aug=np.zeros(n_a),
        eta_s=np.zeros(n_a),
    )
    for b in design.blocks:
        state.theta[b.name] = theta.get(b.name, np.zeros(b.dim))
        if b.penalized:
            state.sigma2[b.name] = float(b.sigma2_init)
    refresh_predictors(design, state)
    return state


def refresh_predictors(design, state):
    """Recompute every cached predictor from the coefficients."""
    N, n_a = design.y.size, design.delta.size
    state.eta_l = np.zeros(N)
    state.eta_ls_long = np.zeros(N)
    state.eta_ls_aug = np.zeros(n_a)
    state.eta_s = np.zeros(n_a)
    for b in design.blocks:
        th = state.theta[b.name]
        fl = b.design_long.dot(th) if b.design_long is not None and b.predictor != "s" else None
        fa = b.design_aug.dot(th) if b.design_aug is not None and design.has_survival and b.predictor != "l" else None
        state.parts[b.name] = (fl, fa)
        if b.predictor == "l":
            state.eta_l += fl
        elif b.predictor == "ls":
            state.eta_ls_long += fl
            if fa is not None:
                state.eta_ls_aug += fa
        else:
            state.eta_s += fa
    return state


def cache_error(design, state):
    """Largest absolute gap between cached and recomputed predictors."""
    fresh = refresh_predictors(design, state.copy())
    gaps = [
        np.max(np.abs(a - b), initial=0.0)
        for a, b in (
            (state.eta_l, fresh.eta_l),
            (state.eta_ls_long, fresh.eta_ls_long),
            (state.eta_ls_aug, fresh.eta_ls_aug),
            (state.eta_s, fresh.eta_s),
        )
    ]
    return float(max(gaps))


# --------------------------------------------------------------------------
# likelihoods
# --------------------------------------------------------------------------


def gaussian_loglik(y, eta_l, eta_ls, sigma2_eps):
    """Normal log-likelihood of the longitudinal outcome."""
    if not sigma2_eps > 0:
        raise ValueError("sigma2_eps must be positive")
    r = np.asarray(y, dtype=float) - eta_l - eta_ls
    return float(-0.5 * r.size * (LOG_2PI + math.log(sigma2_eps)) - 0.5 * np.dot(r, r) / sigma2_eps)


def _clip(mu, diagnostics=None):
    if diagnostics is not None:
        over = np.count_nonzero(np.abs(mu) > MU_CLIP)
        if over:
            diagnostics.clipped += int(over)
    return np.clip(mu, -MU_CLIP, MU_CLIP)


def poisson_loglik(delta, f0, offset, eta_s, alpha, eta_ls, diagnostics=None):
    """Poisson log-likelihood of augmented rows, ``delta!`` omitted.

    The log mean is ``f0 + offset + eta_s + alpha * eta_ls``, clipped to
    ``[-30, 30]``; clipped rows are counted in ``diagnostics``.
    """
    mu = _clip(np.asarray(f0 + offset + eta_s + alpha * np.asarray(eta_ls), dtype=float), diagnostics)
    return float(np.dot(delta, mu) - np.sum(np.exp(mu)))


def _log_mean(design, state, eta_s=None, eta_ls_aug=None, alpha=None):
    eta_s = state.eta_s if eta_s is None else eta_s
    eta_ls_aug = state.eta_ls_aug if eta_ls_aug is None else eta_ls_aug
    alpha = state.alpha if alpha is None else alpha
    return _clip(eta_s + design.offset + alpha * eta_ls_aug, state.diagnostics)


def _poisson_from_mu(delta, mu):
    m = np.exp(mu)
    return float(np.dot(delta, mu) - m.sum()), m


def _floor(w, diagnostics):
    low = w < WEIGHT_FLOOR
    if low.any():
        diagnostics.floored += int(low.sum())
        w = np.where(low, WEIGHT_FLOOR, w)
    return w


def iwls_weights_survival(design, state):
    """Working weights and observations for survival blocks.

    Returns ``(w, y_tilde)`` per augmented row: ``w = exp(mu)`` and
    ``y_tilde = eta_s + (delta - exp(mu)) / w``.
    """
    mu = _log_mean(design, state)
    m = np.exp(mu)
    w = _floor(m.copy(), state.diagnostics)
    return w, state.eta_s + (design.delta - m) / w


def iwls_weights_shared(design, state):
    """Working weights and observations for shared blocks.

    Longitudinal rows come first, augmented rows second.  Longitudinal rows
    have weight ``1 / sigma2_eps`` and score ``(y - eta_l - eta_ls) /
    sigma2_eps``; augmented rows have weight ``alpha^2 exp(mu)`` and score
    ``alpha (delta - exp(mu))``.
    """
    s2 = state.sigma2_eps
    w_y = np.full(design.y.size, 1.0 / s2)
    v_y = (design.y - state.eta_l - state.eta_ls_long) / s2
    if design.has_survival:
        m = np.exp(_log_mean(design, state))
        w_d = state.alpha**2 * m
        v_d = state.alpha * (design.delta - m)
    else:
        w_d = v_d = np.zeros(0)
    w = np.concatenate([w_y, w_d])
    v = np.concatenate([v_y, v_d])
    w = _floor(w, state.diagnostics)
    eta = np.concatenate([state.eta_ls_long, state.eta_ls_aug])
    return w, eta + v / w


# --------------------------------------------------------------------------
# Gaussian helpers
# --------------------------------------------------------------------------


class _Gaussian:
    """``N(P^{-1} b, P^{-1})`` from a dense or diagonal precision ``P``."""

    def __init__(self, P, b, diagnostics=None, name=None):
        self.diag = P.ndim == 1
        if self.diag:
            if np.any(P <= 0):
                raise SamplerError("precision is not positive definite", block=name)
            self.P = P
            self.mean = b / P
            self.half_logdet = 0.5 * float(np.sum(np.log(P)))
            return
        P = 0.5 * (P + P.T)
        try:
            L = cholesky(P, lower=True, check_finite=False)
        except LinAlgError:
            jitter = 1e-10 * max(1.0, float(np.mean(np.abs(np.diag(P)))))
            try:
                L = cholesky(P + jitter * np.eye(P.shape[0]), lower=True, check_finite=False)
            except LinAlgError:
                raise SamplerError("precision matrix is numerically singular", block=name) from None
            if diagnostics is not None:
                diagnostics.jittered += 1
        self.L = L
        self.mean = cho_solve((L, True), b, check_finite=False)
        self.half_logdet = float(np.sum(np.log(np.diag(L))))

    def draw(self, rng):
        z = rng.standard_normal(self.mean.size)
        if self.diag:
            return self.mean + z / np.sqrt(self.P)
        return self.mean + solve_triangular(self.L.T, z, lower=False, check_finite=False)

    def logpdf(self, x):
        d = x - self.mean
        if self.diag:
            q = float(np.dot(self.P * d, d))
        else:
            u = self.L.T @ d
            q = float(np.dot(u, u))
        return self.half_logdet - 0.5 * d.size * LOG_2PI - 0.5 * q


def _precision(block, H, sigma2):
    if not block.penalized:
        return H
    if H.ndim == 1:
        if block.K_is_diag:
            return H + block.K_diag / sigma2
        H = np.diag(H)
    return H + block.K / sigma2


def _times(H, theta):
    return H * theta if H.ndim == 1 else H @ theta


def _log_prior(block, theta, sigma2):
    if not block.penalized:
        return 0.0
    return -0.5 * block.quad(theta) / sigma2


# --------------------------------------------------------------------------
# block updates
# --------------------------------------------------------------------------


def _set_part(design, state, block, theta, f_long=None, f_aug=None):
    old_long, old_aug = state.parts[block.name]
    if block.predictor == "l":
        state.eta_l = state.eta_l + (f_long - old_long)
    elif block.predictor == "ls":
        state.eta_ls_long = state.eta_ls_long + (f_long - old_long)
        if f_aug is not None:
            state.eta_ls_aug = state.eta_ls_aug + (f_aug - old_aug)
    else:
        state.eta_s = state.eta_s + (f_aug - old_aug)
    state.parts[block.name] = (f_long, f_aug)
    state.theta[block.name] = theta


def gibbs_update_longitudinal_block(design, state, block, rng):
    """Exact full-conditional draw for a block of the longitudinal predictor."""
    Z = block.design_long
    s2 = state.sigma2_eps
    f_old = state.parts[block.name][0]
    resid = design.y - (state.eta_l - f_old) - state.eta_ls_long
    H = _gram_ones(block, Z) / s2
    P = _precision(block, H, state.sigma2.get(block.name, 1.0))
    g = _Gaussian(P, Z.tdot(resid) / s2, state.diagnostics, block.name)
    theta = g.draw(rng)
    _set_part(design, state, block, theta, f_long=Z.dot(theta))
    return theta


def _gram_ones(block, Z):
    cache = block.__dict__.setdefault("_gram_cache", {})
    key = id(Z)
    if key not in cache:
        cache[key] = Z.gram(np.ones(Z.n_rows))
    return cache[key]


def _survival_proposal(design, state, block, theta, eta_s):
    Z = block.design_aug
    mu = _log_mean(design, state, eta_s=eta_s)
    loglik, m = _poisson_from_mu(design.delta, mu)
    w = _floor(m, state.diagnostics)
    H = Z.gram(w)
    P = _precision(block, H, state.sigma2.get(block.name, 1.0))
    b = _times(H, theta) + Z.tdot(design.delta - m)
    return loglik, _Gaussian(P, b, state.diagnostics, block.name)


def iwls_mh_update_survival_block(design, state, block, rng):
    """IWLS Metropolis-Hastings step for a survival block.

    Returns ``True`` when the proposal was accepted.
    """
    Z = block.design_aug
    theta = state.theta[block.name]
    s2 = state.sigma2.get(block.name, 1.0)
    f_old = state.parts[block.name][1]
    loglik, fwd = _survival_proposal(design, state, block, theta, state.eta_s)
    prop = fwd.draw(rng)
    f_new = Z.dot(prop)
    eta_s_new = state.eta_s + (f_new - f_old)
    loglik_new, rev = _survival_proposal(design, state, block, prop, eta_s_new)
    log_ratio = (
        loglik_new
        + _log_prior(block, prop, s2)
        + rev.logpdf(theta)
        - loglik
        - _log_prior(block, theta, s2)
        - fwd.logpdf(prop)
    )
    if _accept(log_ratio, rng):
        _set_part(design, state, block, prop, f_aug=f_new)
        return True
    return False


def _shared_proposal(design, state, block, theta, eta_l, eta_ls_long, eta_ls_aug):
    s2 = state.sigma2_eps
    Zl, Za = block.design_long, block.design_aug
    resid = design.y - eta_l - eta_ls_long
    loglik = gaussian_loglik(design.y, eta_l, eta_ls_long, s2) if design.has_longitudinal else 0.0
    H = _gram_ones(block, Zl) / s2
    score = Zl.tdot(resid) / s2
    if design.has_survival and Za is not None:
        mu = _log_mean(design, state, eta_ls_aug=eta_ls_aug)
        ll_d, m = _poisson_from_mu(design.delta, mu)
        loglik += ll_d
        a = state.alpha
        if a != 0.0:
            H = H + Za.gram(_floor(a * a * m, state.diagnostics))
            score = score + a * Za.tdot(design.delta - m)
    P = _precision(block, H, state.sigma2.get(block.name, 1.0))
    b = _times(H, theta) + score
    return loglik, _Gaussian(P, b, state.diagnostics, block.name)


def iwls_mh_update_shared_block(design, state, block, rng):
    """IWLS Metropolis-Hastings step for a shared block (joint likelihood)."""
    Zl, Za = block.design_long, block.design_aug
    theta = state.theta[block.name]
    s2 = state.sigma2.get(block.name, 1.0)
    old_long, old_aug = state.parts[block.name]
    loglik, fwd = _shared_proposal(
        design, state, block, theta, state.eta_l, state.eta_ls_long, state.eta_ls_aug
    )
    prop = fwd.draw(rng)
    f_long = Zl.dot(prop)
    eta_long_new = state.eta_ls_long + (f_long - old_long)
    if old_aug is not None:
        f_aug = Za.dot(prop)
        eta_aug_new = state.eta_ls_aug + (f_aug - old_aug)
    else:
        f_aug, eta_aug_new = None, state.eta_ls_aug
    loglik_new, rev = _shared_proposal(design, state, block, prop, state.eta_l, eta_long_new, eta_aug_new)
    log_ratio = (
        loglik_new
        + _log_prior(block, prop, s2)
        + rev.logpdf(theta)
        - loglik
        - _log_prior(block, theta, s2)
        - fwd.logpdf(prop)
    )
    if _accept(log_ratio, rng):
        _set_part(design, state, block, prop, f_long=f_long, f_aug=f_aug)
        return True
    return False


def _alpha_proposal(design, state, alpha):
    x = state.eta_ls_aug
    mu = _log_mean(design, state, alpha=alpha)
    loglik, m = _poisson_from_mu(design.delta, mu)
    H = float(np.dot(_floor(m, state.diagnostics), x * x))
    P = np.array([H + 1.0 / state.sigma2_alpha])
    b = np.array([H * alpha + np.dot(x, design.delta - m)])
    return loglik, _Gaussian(P, b, state.diagnostics, "alpha")


def update_alpha(design, state, rng):
    """IWLS-MH step for the association, treated as a one-column survival effect.

    The design column is the shared predictor on the augmented rows and the
    prior is ``N(0, sigma2_alpha)``.
    """
    a = state.alpha
    loglik, fwd = _alpha_proposal(design, state, a)
    prop = float(fwd.draw(rng)[0])
    loglik_new, rev = _alpha_proposal(design, state, prop)
    s2 = state.sigma2_alpha
    log_ratio = (
        loglik_new
        - 0.5 * prop * prop / s2
        + rev.logpdf(np.array([a]))
        - loglik
        + 0.5 * a * a / s2
        - fwd.logpdf(np.array([prop]))
    )
    if _accept(log_ratio, rng):
        state.alpha = prop
        return True
    return False


def _accept(log_ratio, rng):
    if not np.isfinite(log_ratio):
        if np.isnan(log_ratio):
            return False
        return log_ratio > 0
    return math.log(rng.random()) <= min(0.0, log_ratio)


def _rinvgamma(rng, shape, scale):
    return scale / rng.gamma(shape)


def gibbs_update_variances(design, state, rng):
    """Inverse-gamma draws for the model, effect and association variances."""
    hyper = design.hyper
    if design.has_longitudinal and not design.fixed_sigma2_eps:
        r = design.y - state.eta_l - state.eta_ls_long
        state.sigma2_eps = _rinvgamma(rng, hyper.a0 + 0.5 * r.size, hyper.b0 + 0.5 * float(np.dot(r, r)))
    for b in design.blocks:
        if not b.penalized or b.fixed_sigma2:
            continue
        th = state.theta[b.name]
        state.sigma2[b.name] = _rinvgamma(rng, b.a + 0.5 * b.rank, b.b + 0.5 * b.quad(th))
    if design.update_alpha and not design.fixed_sigma2_alpha:
        state.sigma2_alpha = _rinvgamma(
            rng, hyper.a_alpha + 0.5, hyper.b_alpha + 0.5 * state.alpha * state.alpha
        )
    return state


def log_posterior(design, state):
    """Unnormalised joint log posterior at ``state``."""
    hyper = design.hyper
    lp = 0.0
    if design.has_longitudinal:
        lp += gaussian_loglik(design.y, state.eta_l, state.eta_ls_long, state.sigma2_eps)
        if not design.fixed_sigma2_eps:
            lp += -(hyper.a0 + 1) * math.log(state.sigma2_eps) - hyper.b0 / state.sigma2_eps
    if design.has_survival:
        lp += poisson_loglik(design.delta, 0.0, design.offset, state.eta_s, state.alpha, state.eta_ls_aug)
    for b in design.blocks:
        if not b.penalized:
            continue
        s2 = state.sigma2[b.name]
        lp += -0.5 * b.rank * math.log(s2) - 0.5 * b.quad(state.theta[b.name]) / s2
        if not b.fixed_sigma2:
            lp += -(b.a + 1) * math.log(s2) - b.b / s2
    if design.update_alpha:
        s2a = state.sigma2_alpha
        lp += -0.5 * math.log(s2a) - 0.5 * state.alpha**2 / s2a
        if not design.fixed_sigma2_alpha:
            lp += -(hyper.a_alpha + 1) * math.log(s2a) - hyper.b_alpha / s2a
    return lp


# --------------------------------------------------------------------------
# chains
# --------------------------------------------------------------------------


@dataclass
class ChainOutput:
    """Retained draws, acceptance rates and run metadata of one chain."""

    draws: pd.DataFrame
    acceptance: dict
    seed: int
    log_posterior: np.ndarray
    iterations: int
    burn_in: int
    thinning: int
    seconds: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    chain: int = 0

    @property
    def n_draws(self):
        return len(self.draws)

    def block_draws(self, name):
        cols = [c for c in self.draws.columns if c.startswith(name + ".") and c[len(name) + 1 :].isdigit()]
        cols.sort(key=lambda c: int(c.rsplit(".", 1)[1]))
        return self.draws[cols].to_numpy()

    def to_files(self, directory, prefix=""):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.draws.to_csv(directory / f"{prefix}draws.csv", index=False, float_format="%.17g")
        meta = {
            "acceptance": self.acceptance,
            "seed": self.seed,
            "chain": self.chain,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thinning": self.thinning,
            "n_draws": self.n_draws,
            "diagnostics": self.diagnostics,
            "timing_seconds": self.seconds,
        }
        (directory / f"{prefix}acceptance.json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def from_files(cls, directory, prefix=""):
        directory = Path(directory)
        draws = pd.read_csv(directory / f"{prefix}draws.csv", float_precision="round_trip").astype(float)
        meta = json.loads((directory / f"{prefix}acceptance.json").read_text())
        return cls(
            draws=draws,
            acceptance=meta["acceptance"],
            seed=meta["seed"],
            log_posterior=np.zeros(0),
            iterations=meta["iterations"],
            burn_in=meta["burn_in"],
            thinning=meta["thinning"],
            seconds=meta.get("timing_seconds", 0.0),
            diagnostics=meta.get("diagnostics", {}),
            chain=meta.get("chain", 0),
        )


def parameter_names(design):
    """Column names of the draws table, ``block.index`` for coefficients."""
    names = []
    for b in design.blocks:
        names += [f"{b.name}.{i}" for i in range(b.original_dim)]
    for b in design.blocks:
        if b.penalized:
            names.append(f"{b.name}.sigma2")
    if design.update_alpha:
        names += ["alpha", "sigma2_alpha"]
    if design.has_longitudinal:
        names.append("sigma2_eps")
    return names


def _snapshot(design, state):
    out = [b.to_original(state.theta[b.name]) for b in design.blocks]
    out += [[state.sigma2[b.name]] for b in design.blocks if b.penalized]
    if design.update_alpha:
        out.append([state.alpha, state.sigma2_alpha])
    if design.has_longitudinal:
        out.append([state.sigma2_eps])
    return np.concatenate([np.atleast_1d(np.asarray(o, dtype=float)) for o in out])


def sweep(design, state, rng, accepted):
    """One full iteration of the sampler; updates ``state`` in place."""
    for b in design.blocks:
        if b.predictor == "l":
            gibbs_update_longitudinal_block(design, state, b, rng)
    for b in design.blocks:
        if b.predictor == "s":
            accepted[b.name] += iwls_mh_update_survival_block(design, state, b, rng)
    for b in design.blocks:
        if b.predictor == "ls":
            accepted[b.name] += iwls_mh_update_shared_block(design, state, b, rng)
    if design.update_alpha:
        accepted["alpha"] += update_alpha(design, state, rng)
    gibbs_update_variances(design, state, rng)
    return state


def run_design(design, iterations, burn_in=0, thinning=1, seed=0, *, chain=0, state=None,
               check_every=0, callback=None):
    """Run one chain on an assembled design.

    ``seed`` and ``chain`` determine the random stream: chain ``c`` uses the
    ``c``-th child of ``SeedSequence(seed)``.  ``check_every > 0`` verifies
    cache coherence every that many sweeps.
    """
    if burn_in >= iterations:
        raise ValueError("burn_in must be < iterations")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(chain + 1)[chain]))
    state = initial_state(design) if state is None else state
    names = parameter_names(design)
    n_keep = (iterations - burn_in) // thinning
    out = np.empty((n_keep, len(names)))
    lp_trace = np.empty(iterations)
    mh = [b.name for b in design.blocks if b.predictor in ("s", "ls")]
    if design.update_alpha:
        mh.append("alpha")
    accepted = {name: 0 for name in mh}
    k = 0
    t0 = time.perf_counter()
    for it in range(1, iterations + 1):
        try:
            sweep(design, state, rng, accepted)
        except SamplerError as err:
            raise SamplerError(str(err), iteration=it) from err
        if check_every and it % check_every == 0:
            gap = cache_error(design, state)
            if gap > 1e-10:
                raise SamplerError(f"cached predictors drifted by {gap:.3g}", iteration=it)
        lp_trace[it - 1] = log_posterior(design, state)
        if it > burn_in and (it - burn_in) % thinning == 0 and k < n_keep:
            out[k] = _snapshot(design, state)
            k += 1
        if callback is not None:
            callback(it, state)
    seconds = time.perf_counter() - t0
    return ChainOutput(
        draws=pd.DataFrame(out, columns=names),
        acceptance={name: cnt / iterations for name, cnt in accepted.items()},
        seed=int(seed),
        log_posterior=lp_trace,
        iterations=iterations,
        burn_in=burn_in,
        thinning=thinning,
        seconds=seconds,
        diagnostics=dict(vars(state.diagnostics)),
        chain=chain,
    )


def run_chain(long, surv, spec, config, *, hyper=None, maps=None, design=None):
    """Fit a joint model: assemble the design and run ``config.chains`` chains.

    Returns a single :class:`ChainOutput` for one chain, otherwise a list.
    Chains run in separate processes when more than one is requested.
    """
    from .model import build_design

    if design is None:
        design = build_design(spec, long, surv, hyper=hyper, sampler=config, maps=maps)
    args = (config.iterations, config.burn_in, config.thinning, config.seed)
    if config.chains == 1:
        return run_design(design, *args)
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=config.chains) as pool:
        futures = [pool.submit(run_design, design, *args, chain=c) for c in range(config.chains)]
        return [f.result() for f in futures]
