"""Time grids, paths, path functionals and the Euler-Maruyama simulator.

Drift and diffusion functionals are vectorised over leading axes: paths are
arrays whose last axis is time (length N+1) and a functional called at step
``k`` returns one value per leading index.  A functional must read only
indices ``0..k`` of the paths it is given.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonDegeneracyViolation, NonFinite

NOISE_STREAM = 0
INPUT_STREAM = 1
PROBE_STREAM = 2

DriftFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]
DiffusionFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretisation of [0, T] into N steps."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0 or not np.isfinite(self.horizon):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def __len__(self):
        return self.n_steps + 1


@dataclass(frozen=True, eq=False)
class Path:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"path needs {self.grid.n_steps + 1} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFinite("path contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class FunctionalSystem:
    """The pair (F, G) of non-anticipative functionals plus the bound K.

    ``awgn_form`` marks systems with F(k, f, g) = f(t_k) and G == 1, for which
    Gaussian inputs admit exact conjugate conditioning.
    """

    name: str
    drift: DriftFn
    diffusion: DiffusionFn
    nondegeneracy_K: float
    awgn_form: bool = False

    def __post_init__(self):
        if not self.nondegeneracy_K > 0:
            raise ValueError("nondegeneracy_K must be positive")

    def F(self, k: int, f, g) -> np.ndarray:
        return np.asarray(self.drift(k, np.asarray(f, dtype=float), np.asarray(g, dtype=float)), dtype=float)

    def G(self, k: int, g) -> np.ndarray:
        val = np.asarray(self.diffusion(k, np.asarray(g, dtype=float)), dtype=float)
        check_nondegenerate(val, self.nondegeneracy_K, k)
        return val


def check_nondegenerate(g_values, K, k=None):
    # nan compares False, so aborted (non-finite) replicates do not trigger this
    with np.errstate(invalid="ignore"):
        bad = np.asarray(g_values) ** 2 < K
    if np.any(bad):
        worst = float(np.nanmin(np.asarray(g_values) ** 2))
        raise NonDegeneracyViolation(f"G^2 = {worst:.6g} < K = {K:.6g} at step {k}")


def philox(master_seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator keyed by (master_seed, *key).

    The draw index within the stream is the Philox counter, so the value at a
    given (seed, stream, replicate, step) never depends on scheduling.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(v) for v in key))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


@dataclass(frozen=True, eq=False)
class NoiseBundle:
    """Brownian increments for one replicate: N draws of Normal(0, dt)."""

    increments: np.ndarray
    master_seed: int
    replicate_index: int

    @classmethod
    def draw(cls, grid: TimeGrid, master_seed: int, replicate_index: int, sub: Sequence[int] = ()):
        inc = brownian_increments(grid, master_seed, [replicate_index], sub)[0]
        return cls(inc, master_seed, replicate_index)

    def coarsen(self, factor: int) -> "NoiseBundle":
        """Sum consecutive blocks of ``factor`` increments (same Brownian path, coarser grid)."""
        n = len(self.increments)
        if n % factor:
            raise ValueError(f"{n} increments not divisible by {factor}")
        return NoiseBundle(self.increments.reshape(-1, factor).sum(axis=1), self.master_seed, self.replicate_index)


def brownian_increments(grid: TimeGrid, master_seed: int, replicates, sub: Sequence[int] = ()) -> np.ndarray:
    """Increment matrix of shape (len(replicates), N), one keyed stream per replicate."""
    scale = np.sqrt(grid.dt)
    out = np.empty((len(replicates), grid.n_steps))
    for i, rep in enumerate(replicates):
        out[i] = philox(master_seed, NOISE_STREAM, rep, *sub).standard_normal(grid.n_steps) * scale
    return out


def simulate_batch(system: FunctionalSystem, x, r: float, dW, grid: TimeGrid):
    """Euler-Maruyama over a batch of replicates.

    Returns ``(y, aborted)`` where ``aborted`` flags rows whose state became
    non-finite; those rows are left as computed (nan/inf) and must be dropped
    by the caller.
    """
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    x = np.asarray(x, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != grid.n_steps or x.shape[-1] != grid.n_steps + 1:
        raise ValueError("input path / noise length does not match grid")
    shape = np.broadcast_shapes(x.shape[:-1], dW.shape[:-1])
    y = np.zeros(shape + (grid.n_steps + 1,))
    x = np.broadcast_to(x, shape + x.shape[-1:])
    sr_dt = np.sqrt(r) * grid.dt
    with np.errstate(all="ignore"):
        for k in range(grid.n_steps):
            drift = system.F(k, x, y) if r > 0 else 0.0
            y[..., k + 1] = y[..., k] + sr_dt * drift + system.G(k, y) * dW[..., k]
    aborted = ~np.all(np.isfinite(y), axis=-1)
    return y, aborted


def simulate_output(system: FunctionalSystem, x, r: float, noise: NoiseBundle, grid: TimeGrid) -> Path:
    y, aborted = simulate_batch(system, np.asarray(x, dtype=float), r, noise.increments, grid)
    if aborted:
        raise NonFinite(f"state blew up for system {system.name!r} at r={r}, dt={grid.dt}")
    return Path(grid, y)


def simulate_coupled(system, x, r_list, noise: NoiseBundle, grid: TimeGrid) -> list:
    """One output path per r, all driven by the same increments."""
    r_list = list(r_list)
    if any(b < a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r_list must be ascending")
    return [simulate_output(system, x, r, noise, grid) for r in r_list]


@dataclass
class ProbeReport:
    name: str
    samples: int
    passed: bool
    counterexample: Optional[dict] = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "probe": self.name,
            "samples": self.samples,
            "outcome": "pass" if self.passed else "fail",
            "counterexample": self.counterexample,
            **self.details,
        }


def random_paths(rng: np.random.Generator, grid: TimeGrid, n: int, start_at_zero=True) -> np.ndarray:
    inc = rng.standard_normal((n, grid.n_steps)) * np.sqrt(grid.dt) * rng.uniform(0.5, 4.0, size=(n, 1))
    paths = np.zeros((n, grid.n_steps + 1))
    paths[:, 1:] = np.cumsum(inc, axis=1)
    if not start_at_zero:
        paths += rng.normal(size=(n, 1))
    return paths


def probe_non_anticipativity(system: FunctionalSystem, grid: TimeGrid, n_probes: int, seed: int) -> ProbeReport:
    """Check F and G ignore path values after the evaluation index.

    Each probe draws k < N and a path pair agreeing on 0..k; the second path
    is perturbed after k either everywhere or at a single coordinate.
    """
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = philox(seed, PROBE_STREAM, 0)
    N = grid.n_steps
    for i in range(n_probes):
        k = int(rng.integers(0, N))
        f1, g1 = random_paths(rng, grid, 2, start_at_zero=False)
        f1 = f1.copy()
        g1[0] = 0.0
        f2, g2 = f1.copy(), g1.copy()
        if rng.random() < 0.5:
            j = int(rng.integers(k + 1, N + 1))
            bump = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 5.0)
            g2[j] += bump
            f2[j] -= bump
        else:
            g2[k + 1:] += rng.normal(scale=2.0, size=N - k)
            f2[k + 1:] += rng.normal(scale=2.0, size=N - k)
        F1, F2 = system.F(k, f1, g1), system.F(k, f2, g2)
        G1, G2 = system.diffusion(k, g1), system.diffusion(k, g2)
        if not (np.array_equal(F1, F2) and np.array_equal(G1, G2)):
            return ProbeReport(
                "non_anticipativity", i + 1, False,
                {"k": k, "F": [float(F1), float(F2)], "G": [float(G1), float(G2)]},
            )
    return ProbeReport("non_anticipativity", n_probes, True)
