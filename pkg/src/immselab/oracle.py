"""Reference values that do not go through the simulator or the filters.

Gaussian and BPSK references use the continuous-time sufficient statistic
Y_t = sqrt(r) X t + W_t of the AWGN channel; the telegraph reference
enumerates every state sequence on a tiny grid.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import roots_hermitenorm
from scipy.stats import norm

from .errors import QuadratureUnstable, TooLarge
from .sde import Path, TimeGrid

QUANTITIES = ("cmmse", "ncmmse", "mi", "dmi_dr")
STABILITY_TOL = 1e-8
MAX_NODES = 4096


@dataclass(frozen=True)
class OracleValue:
    quantity: str
    value: float
    method: str
    arguments: dict = field(default_factory=dict)
    n_nodes: Optional[int] = None

    def __float__(self):
        return float(self.value)


def _check_quantity(quantity):
    if quantity not in QUANTITIES:
        raise ValueError(f"quantity must be one of {QUANTITIES}, got {quantity!r}")


def gauss_oracle(quantity: str, t: float = None, r: float = 1.0, sigma2: float = 1.0, T: float = 1.0) -> OracleValue:
    """Closed forms for a Normal(0, sigma2) constant input on the AWGN channel.

    cmmse(t, r)     = sigma2 / (1 + r sigma2 t)
    ncmmse(T, s, r) = sigma2 / (1 + r sigma2 T)   (any s <= T)
    mi(r)           = log(1 + r sigma2 T) / 2
    dmi_dr(r)       = sigma2 T / (2 (1 + r sigma2 T))
    """
    _check_quantity(quantity)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if quantity == "cmmse":
        value = sigma2 / (1.0 + r * sigma2 * t)
    elif quantity == "ncmmse":
        value = sigma2 / (1.0 + r * sigma2 * T)
    elif quantity == "mi":
        value = 0.5 * np.log1p(r * sigma2 * T)
    else:
        value = sigma2 * T / (2.0 * (1.0 + r * sigma2 * T))
    return OracleValue(quantity, float(value), "closed_form", {"t": t, "r": r, "sigma2": sigma2, "T": T})


def sech2(z):
    a = np.exp(-2.0 * np.abs(z))
    return 4.0 * a / (1.0 + a) ** 2


def logcosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - np.log(2.0)


def gauss_hermite_expectation(fn, n_nodes: int) -> float:
    """E[fn(U)] for U ~ Normal(0, 1) with n_nodes probabilists' Hermite nodes."""
    # scipy switches to asymptotic node formulas for large n; numpy's hermegauss overflows above 256
    nodes, weights = roots_hermitenorm(n_nodes)
    return float(np.dot(weights, fn(nodes)) / np.sqrt(2.0 * np.pi))


def stable_expectation(fn, n_nodes: int):
    """Double the node count until successive values agree within 1e-8."""
    n = n_nodes
    prev = gauss_hermite_expectation(fn, n)
    while 2 * n <= MAX_NODES:
        cur = gauss_hermite_expectation(fn, 2 * n)
        if abs(cur - prev) <= STABILITY_TOL:
            return cur, 2 * n
        n, prev = 2 * n, cur
    raise QuadratureUnstable(f"Gauss-Hermite value not stable to {STABILITY_TOL} at {n} nodes")


def bpsk_oracle(quantity: str, t: float = None, r: float = 1.0, T: float = 1.0, n_nodes: int = 64) -> OracleValue:
    """References for an equiprobable +-1 constant input on the AWGN channel.

    With snr = r t the posterior mean is tanh(snr X + sqrt(snr) U), so
    cmmse = E[sech^2(snr + sqrt(snr) U)] and mi = snr - E[log cosh(snr + sqrt(snr) U)]
    (both by the symmetry X -> -X).
    """
    _check_quantity(quantity)
    if n_nodes < 32:
        raise ValueError("n_nodes must be >= 32")
    horizon = t if quantity == "cmmse" else T
    snr = r * horizon
    args = {"t": t, "r": r, "T": T}
    if snr == 0:
        value = {"cmmse": 1.0, "ncmmse": 1.0, "mi": 0.0, "dmi_dr": T / 2.0}[quantity]
        return OracleValue(quantity, value, "closed_form", args)
    root = np.sqrt(snr)
    if quantity == "mi":
        value, nodes = stable_expectation(lambda u: logcosh(snr + root * u), n_nodes)
        value = snr - value
    else:
        value, nodes = stable_expectation(lambda u: sech2(snr + root * u), n_nodes)
        if quantity == "dmi_dr":
            value = 0.5 * T * value
    return OracleValue(quantity, float(value), "quadrature", args, nodes)


def telegraph_bruteforce(system, input_model, y, r, grid: Optional[TimeGrid] = None, t_index: Optional[int] = None):
    """P(X_s = a | y up to t) for s = 0..t by enumerating all state sequences.

    Returns an array of shape (t+1, 2).  Sequences cover indices 0..N, so the
    enumeration size is 2**(N+1); grids with N > 10 are refused.
    """
    if isinstance(y, Path):
        y, grid = y.values, grid or y.grid
    y = np.asarray(y, dtype=float)
    n = grid.n_steps
    if n > 10:
        raise TooLarge(f"brute-force enumeration limited to N <= 10, got N = {n}")
    t = n if t_index is None else t_index
    alphabet = np.asarray(input_model.alphabet)
    matrix = input_model.transition_matrix(grid.dt)
    init = np.asarray(input_model.initial)
    dy = np.diff(y)
    logp = []
    seqs = list(itertools.product((0, 1), repeat=n + 1))
    for seq in seqs:
        lp = np.log(init[seq[0]]) if init[seq[0]] > 0 else -np.inf
        with np.errstate(divide="ignore"):
            for j in range(n):
                lp += np.log(matrix[seq[j], seq[j + 1]])
        x = alphabet[list(seq)]
        for j in range(t):
            mean = np.sqrt(r) * float(system.drift(j, x, y)) * grid.dt
            scale = abs(float(system.G(j, y))) * np.sqrt(grid.dt)
            lp += norm.logpdf(dy[j], loc=mean, scale=scale)
        logp.append(lp)
    logp = np.asarray(logp)
    w = np.exp(logp - logp.max())
    w /= w.sum()
    states = np.asarray(seqs)
    out = np.empty((t + 1, 2))
    for s in range(t + 1):
        out[s, 0] = w[states[:, s] == 0].sum()
        out[s, 1] = w[states[:, s] == 1].sum()
    return out
