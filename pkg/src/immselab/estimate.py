"""Exact conditional expectations on the Euler-Maruyama model.

Everything here conditions on the *discretised* observation model
    dy_k ~ Normal(sqrt(r) F(k, x, y) dt, G(k, y)^2 dt),
so the only randomness left in downstream estimates is the outer Monte Carlo.
Three routes are supported:

* FiniteConstant inputs: enumeration of the alphabet (log-sum-exp weights).
* TelegraphMarkov inputs: HMM forward filter and backward smoother.
* GaussConstant inputs on the pure AWGN form: conjugate Gaussian update.

All batch functions accept paths with arbitrary leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import UnsupportedInput
from .inputs import FiniteConstant, GaussConstant, TelegraphMarkov
from .sde import FunctionalSystem, Path, TimeGrid, check_nondegenerate

LOG_2PI = np.log(2.0 * np.pi)


def _unpack(path, grid):
    if isinstance(path, Path):
        return path.values, grid or path.grid
    if grid is None:
        raise ValueError("a TimeGrid is required when passing raw arrays")
    return np.asarray(path, dtype=float), grid


def eval_phi(system: FunctionalSystem, k: int, x, y):
    """phi = F / G at grid index k."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return system.F(k, x, y) / system.G(k, y)


def diffusion_path(system, y, n_steps):
    g = np.stack([np.asarray(system.diffusion(k, y), dtype=float) * np.ones(y.shape[:-1])
                  for k in range(n_steps + 1)], axis=-1)
    check_nondegenerate(g, system.nondegeneracy_K)
    return g


def drift_path(system, x, y, n_steps):
    return np.stack([np.asarray(system.drift(k, x, y), dtype=float) * np.ones(y.shape[:-1])
                     for k in range(n_steps + 1)], axis=-1)


def drift_table(system, values, y, n_steps):
    """F(k, const path a, y) for each alphabet value a; shape (..., N+1, A)."""
    return np.stack([drift_path(system, np.broadcast_to(a, y.shape), y, n_steps) for a in values], axis=-1)


def _gauss_logpdf(d, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - (d - mean) ** 2 / (2.0 * var)


def step_loglik(system, x, y, r, grid: TimeGrid, g=None):
    """Per-step log transition densities, shape (..., N)."""
    dt = grid.dt
    if g is None:
        g = diffusion_path(system, y, grid.n_steps)
    mean = np.sqrt(r) * drift_path(system, x, y, grid.n_steps)[..., :-1] * dt
    return _gauss_logpdf(np.diff(y, axis=-1), mean, g[..., :-1] ** 2 * dt)


def step_loglik_table(system, values, y, r, grid: TimeGrid, g=None):
    """Per-step log densities for each constant candidate; shape (..., N, A)."""
    dt = grid.dt
    if g is None:
        g = diffusion_path(system, y, grid.n_steps)
    mean = np.sqrt(r) * drift_table(system, values, y, grid.n_steps)[..., :-1, :] * dt
    var = (g[..., :-1] ** 2 * dt)[..., None]
    return _gauss_logpdf(np.diff(y, axis=-1)[..., None], mean, var)


def _cumulative(steps, axis=-1):
    steps = np.moveaxis(steps, axis, -1)
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)


def path_loglik(system, candidate_x, y, r, t_index: Optional[int] = None, grid: Optional[TimeGrid] = None):
    """Log density of the first ``t_index`` increments of y given input candidate_x."""
    y, grid = _unpack(y, grid)
    x, _ = _unpack(candidate_x, grid)
    k = grid.n_steps if t_index is None else t_index
    return step_loglik(system, x, y, r, grid)[..., :k].sum(axis=-1)


@dataclass
class PosteriorState:
    """Conditional law of the input given the output.

    ``weights[..., k, a]`` is P(X at index k = support[a] | conditioning) for
    the finite and telegraph routes; ``mean``/``var`` carry the Gaussian route.
    ``horizon`` is None for the causal filter (conditioning on y up to k at
    row k) and the conditioning index t for a smoothed state (rows 0..t).
    """

    kind: str
    support: Optional[tuple] = None
    weights: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    var: Optional[np.ndarray] = None
    horizon: Optional[int] = None
    log_evidence: Optional[np.ndarray] = None


def _require_supported(system, model):
    if isinstance(model, GaussConstant):
        if not system.awgn_form:
            raise UnsupportedInput(
                f"Gaussian input conditioning is only exact for the AWGN form; system {system.name!r} is not")
    elif not isinstance(model, (FiniteConstant, TelegraphMarkov)):
        raise UnsupportedInput(f"no conditioning route for input model {model!r}")


def _finite_filter(system, model, y, r, grid, g=None):
    steps = step_loglik_table(system, model.values, y, r, grid, g)
    with np.errstate(divide="ignore"):
        log_prior = np.log(np.asarray(model.probs))
    logw = _cumulative(steps, axis=-2) + log_prior
    log_ev = logsumexp(logw, axis=-1)
    return np.exp(logw - log_ev[..., None]), log_ev


def _telegraph_forward(model, loge, matrix):
    """Filtered state distributions (..., N+1, 2) and cumulative log evidence."""
    n = loge.shape[-2]
    lead = loge.shape[:-2]
    alpha = np.empty(lead + (n + 1, 2))
    log_ev = np.zeros(lead + (n + 1,))
    alpha[..., 0, :] = model.initial
    for j in range(n):
        m = loge[..., j, :].max(axis=-1)
        u = alpha[..., j, :] * np.exp(loge[..., j, :] - m[..., None])
        c = u.sum(axis=-1)
        log_ev[..., j + 1] = log_ev[..., j] + np.log(c) + m
        alpha[..., j + 1, :] = (u / c[..., None]) @ matrix
    return alpha, log_ev


def _telegraph_backward(loge, matrix, alpha, t):
    """P(X_s | y up to t) for s = 0..t, shape (..., t+1, 2)."""
    lead = loge.shape[:-2]
    beta = np.ones(lead + (2,))
    post = np.empty(lead + (t + 1, 2))
    post[..., t, :] = alpha[..., t, :]
    for s in range(t - 1, -1, -1):
        e = np.exp(loge[..., s, :] - loge[..., s, :].max(axis=-1, keepdims=True))
        beta = e * (beta @ matrix.T)
        beta /= beta.sum(axis=-1, keepdims=True)
        p = alpha[..., s, :] * beta
        post[..., s, :] = p / p.sum(axis=-1, keepdims=True)
    return post


def telegraph_smoothed_columns(loge, matrix, alpha):
    """Yield (s, P(X_s | y up to t) for all t) with shape (..., N+1, 2).

    Rows t < s of each yielded array are meaningless.  One backward sweep
    over s serves every conditioning horizon at once.
    """
    lead = loge.shape[:-2]
    n = loge.shape[-2]
    beta = np.ones(lead + (n + 1, 2))
    yield n, alpha[..., n:, :] * np.ones(lead + (n + 1, 2))
    for s in range(n - 1, -1, -1):
        e = np.exp(loge[..., s, :] - loge[..., s, :].max(axis=-1, keepdims=True))
        beta = e[..., None, :] * (beta @ matrix.T)
        beta[..., s, :] = 1.0
        beta /= beta.sum(axis=-1, keepdims=True)
        p = alpha[..., s, None, :] * beta
        yield s, p / p.sum(axis=-1, keepdims=True)


def _gauss_posterior(model, y, r, grid):
    s2 = model.variance
    t = grid.times
    denom = 1.0 + r * s2 * t
    return np.sqrt(r) * s2 * y / denom, np.broadcast_to(s2 / denom, y.shape).copy()


def _gauss_log_evidence(model, x, y, r, grid):
    """Closed-form log-RN for the AWGN channel with Gaussian constant input."""
    s2 = model.variance
    t = grid.times
    denom = 1.0 + r * s2 * t
    return (np.sqrt(r) * x * y - 0.5 * r * x ** 2 * t
            + 0.5 * np.log(denom) - r * s2 * y ** 2 / (2.0 * denom))


def causal_posterior(system, input_model, y, r, grid: Optional[TimeGrid] = None) -> PosteriorState:
    y, grid = _unpack(y, grid)
    _require_supported(system, input_model)
    if isinstance(input_model, GaussConstant):
        mean, var = _gauss_posterior(input_model, y, r, grid)
        return PosteriorState("gauss", mean=mean, var=var)
    if isinstance(input_model, FiniteConstant):
        w, log_ev = _finite_filter(system, input_model, y, r, grid)
        return PosteriorState("finite", input_model.values, weights=w, log_evidence=log_ev)
    loge = step_loglik_table(system, input_model.alphabet, y, r, grid)
    alpha, log_ev = _telegraph_forward(input_model, loge, input_model.transition_matrix(grid.dt))
    return PosteriorState("telegraph", input_model.alphabet, weights=alpha, log_evidence=log_ev)


def smoothed_posterior(system, input_model, y, r, t_index: int, grid: Optional[TimeGrid] = None) -> PosteriorState:
    """Law of the input at indices 0..t_index given y up to t_index."""
    y, grid = _unpack(y, grid)
    if not 0 <= t_index <= grid.n_steps:
        raise IndexError(f"t_index {t_index} outside 0..{grid.n_steps}")
    causal = causal_posterior(system, input_model, y, r, grid)
    t = t_index
    if causal.kind == "gauss":
        rep = lambda a: np.repeat(a[..., t:t + 1], t + 1, axis=-1)
        return PosteriorState("gauss", mean=rep(causal.mean), var=rep(causal.var), horizon=t)
    if causal.kind == "finite":
        w = np.repeat(causal.weights[..., t:t + 1, :], t + 1, axis=-2)
        return PosteriorState("finite", causal.support, weights=w, horizon=t)
    loge = step_loglik_table(system, input_model.alphabet, y, r, grid)
    post = _telegraph_backward(loge, input_model.transition_matrix(grid.dt), causal.weights, t)
    return PosteriorState("telegraph", causal.support, weights=post, horizon=t)


def phi_table(system, support, y, n_steps):
    """phi(k, const path a, y) for every index and alphabet value; (..., N+1, A)."""
    g = diffusion_path(system, y, n_steps)
    return drift_table(system, support, y, n_steps) / g[..., None]


def conditional_phi(system, posterior: PosteriorState, k: int, y, mode: str = "causal", grid=None):
    """E[phi(k, X, Y) | y up to k] (causal) or | y up to posterior.horizon (smoothed)."""
    y = y.values if isinstance(y, Path) else np.asarray(y, dtype=float)
    n_steps = y.shape[-1] - 1
    if mode == "causal":
        if posterior.horizon is not None:
            raise ValueError("causal mode needs a causal posterior")
    elif mode == "smoothed":
        if posterior.horizon is None or k > posterior.horizon:
            raise ValueError("smoothed mode needs a smoothed posterior with horizon >= k")
    else:
        raise ValueError(f"mode must be 'causal' or 'smoothed', got {mode!r}")
    if posterior.kind == "gauss":
        return posterior.mean[..., k]
    phis = phi_table(system, posterior.support, y, n_steps)[..., k, :]
    return np.sum(posterior.weights[..., k, :] * phis, axis=-1)


def log_rn(system, input_model, x, y, r, t_index: Optional[int] = None, grid: Optional[TimeGrid] = None):
    """Log Radon-Nikodym derivative of the joint law against the product law.

    Returns the whole running path (..., N+1) when ``t_index`` is None.
    """
    y, grid = _unpack(y, grid)
    x, _ = _unpack(x, grid)
    _require_supported(system, input_model)
    if isinstance(input_model, GaussConstant):
        out = _gauss_log_evidence(input_model, x, y, r, grid)
        out[..., 0] = 0.0
    else:
        post = causal_posterior(system, input_model, y, r, grid)
        out = _cumulative(step_loglik(system, x, y, r, grid)) - post.log_evidence
    return out if t_index is None else out[..., t_index]


@dataclass
class BatchAnalysis:
    """Per-replicate quantities for one r.

    ``cond[..., t, s]`` holds E[phi(s) | y up to t] and ``post_var[..., t, s]``
    the matching conditional variance, for s <= t (0 above the diagonal).
    ``log_rn`` is the log-RN derivative at the true input and
    ``log_rn_cond`` its conditional expectation given y up to t, i.e. the
    KL divergence of the input posterior from the prior.
    """

    phi: np.ndarray
    cond: np.ndarray
    post_var: np.ndarray
    log_rn: np.ndarray
    log_rn_cond: np.ndarray

    @property
    def causal(self):
        return np.diagonal(self.cond, axis1=-2, axis2=-1)


def analyse_batch(system, input_model, x, y, r, grid: TimeGrid) -> BatchAnalysis:
    """All conditional-expectation quantities for a batch of (x, y) pairs."""
    _require_supported(system, input_model)
    n = grid.n_steps
    lower = np.tril(np.ones((n + 1, n + 1), dtype=bool))
    g = diffusion_path(system, y, n)
    phi = drift_path(system, x, y, n) / g
    if isinstance(input_model, GaussConstant):
        mean, var = _gauss_posterior(input_model, y, r, grid)
        cond = np.where(lower, mean[..., :, None], 0.0)
        post_var = np.where(lower, var[..., :, None], 0.0)
        lrn = _gauss_log_evidence(input_model, x, y, r, grid)
        lrn[..., 0] = 0.0
        s2 = input_model.variance
        kl = 0.5 * ((var + mean ** 2) / s2 - 1.0 - np.log(var / s2))
        return _zero_info_at_origin(BatchAnalysis(phi, cond, post_var, lrn, kl), r)

    support = input_model.values if isinstance(input_model, FiniteConstant) else input_model.alphabet
    phis = drift_table(system, support, y, n) / g[..., None]
    loge = step_loglik_table(system, support, y, r, grid, g)
    if isinstance(input_model, FiniteConstant):
        w, log_ev = _finite_filter(system, input_model, y, r, grid, g)
        cond = np.where(lower, np.einsum("...ta,...sa->...ts", w, phis), 0.0)
        dev = phis[..., None, :, :] - cond[..., None]
        post_var = np.where(lower, np.einsum("...ta,...tsa->...ts", w, dev * dev), 0.0)
        kl = np.sum(w * (_cumulative(loge, axis=-2) - log_ev[..., None]), axis=-1)
    else:
        matrix = input_model.transition_matrix(grid.dt)
        alpha, log_ev = _telegraph_forward(input_model, loge, matrix)
        cond = np.zeros(y.shape[:-1] + (n + 1, n + 1))
        post_var = np.zeros_like(cond)
        expected_loglik = np.zeros(y.shape[:-1] + (n + 1,))
        for s, post in telegraph_smoothed_columns(loge, matrix, alpha):
            p = post[..., s:, :]
            c = np.sum(p * phis[..., s, None, :], axis=-1)
            cond[..., s:, s] = c
            post_var[..., s:, s] = np.sum(p * (phis[..., s, None, :] - c[..., None]) ** 2, axis=-1)
            if s < n:
                # emission of step s enters every horizon t > s
                expected_loglik[..., s + 1:] += np.sum(post[..., s + 1:, :] * loge[..., s, None, :], axis=-1)
        kl = expected_loglik - log_ev
    lrn = _cumulative(step_loglik(system, x, y, r, grid, g)) - log_ev
    return _zero_info_at_origin(BatchAnalysis(phi, cond, post_var, lrn, kl), r)


def _zero_info_at_origin(a: BatchAnalysis, r) -> BatchAnalysis:
    # at r = 0 the likelihood is flat in x, so both log-RN terms vanish; drop round-off
    if r == 0:
        a.log_rn = np.zeros_like(a.log_rn)
        a.log_rn_cond = np.zeros_like(a.log_rn_cond)
    return a
