"""Input process models and the fixed catalog of named systems."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from .errors import InvalidModel
from .sde import INPUT_STREAM, FunctionalSystem, Path, TimeGrid, philox

PROB_TOL = 1e-12


@dataclass(frozen=True)
class GaussConstant:
    """X(t) = X(0) ~ Normal(0, variance) for all t."""

    variance: float = 1.0
    kind = "gauss"

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidModel(f"variance must be positive, got {self.variance}")

    def _draw(self, rng, grid):
        return np.full(grid.n_steps + 1, rng.standard_normal() * np.sqrt(self.variance))

    def prior_mean_var(self):
        return 0.0, float(self.variance)


@dataclass(frozen=True)
class FiniteConstant:
    """Constant path whose value is drawn from a finite alphabet."""

    values: tuple
    probs: tuple
    kind = "finite"

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if not values:
            raise InvalidModel("empty alphabet")
        if len(values) != len(probs):
            raise InvalidModel("values and probs differ in length")
        if len(set(values)) != len(values):
            raise InvalidModel("alphabet values must be distinct")
        if any(p < 0 or not np.isfinite(p) for p in probs) or abs(sum(probs) - 1.0) > PROB_TOL:
            raise InvalidModel(f"probabilities must be nonnegative and sum to 1, got {probs}")
        if not all(np.isfinite(values)):
            raise InvalidModel("alphabet values must be finite")

    @classmethod
    def from_mapping(cls, mapping):
        items = list(mapping.items())
        return cls(tuple(v for v, _ in items), tuple(p for _, p in items))

    def _draw(self, rng, grid):
        u = rng.random()
        idx = min(int(np.searchsorted(np.cumsum(self.probs), u, side="right")), len(self.values) - 1)
        return np.full(grid.n_steps + 1, self.values[idx])


@dataclass(frozen=True)
class TransitionStructure:
    """Per-step Markov structure handed to the forward-backward filter."""

    alphabet: tuple
    matrix: np.ndarray
    initial: np.ndarray


@dataclass(frozen=True)
class TelegraphMarkov:
    """Symmetric two-state chain switching at rate ``rate``.

    On a grid with step dt the per-step switch probability is the exact
    (1 - exp(-2 rate dt)) / 2, not the first-order rate*dt.
    """

    alphabet: tuple = (1.0, -1.0)
    rate: float = 1.0
    initial: tuple = (0.5, 0.5)
    kind = "telegraph"

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(float(a) for a in self.alphabet))
        object.__setattr__(self, "initial", tuple(float(p) for p in self.initial))
        if len(self.alphabet) != 2 or self.alphabet[0] == self.alphabet[1]:
            raise InvalidModel("telegraph alphabet must hold two distinct values")
        if not (np.isfinite(self.rate) and self.rate >= 0):
            raise InvalidModel(f"switch rate must be >= 0, got {self.rate}")
        if len(self.initial) != 2 or min(self.initial) < 0 or abs(sum(self.initial) - 1) > PROB_TOL:
            raise InvalidModel("initial distribution must be two probabilities summing to 1")

    def switch_probability(self, dt: float) -> float:
        return -np.expm1(-2.0 * self.rate * dt) / 2.0

    def transition_matrix(self, dt: float) -> np.ndarray:
        p = self.switch_probability(dt)
        return np.array([[1.0 - p, p], [p, 1.0 - p]])

    def _draw(self, rng, grid):
        p = self.switch_probability(grid.dt)
        start = int(rng.random() >= self.initial[0])
        switches = rng.random(grid.n_steps) < p
        state = (start + np.concatenate([[0], np.cumsum(switches)])) % 2
        return np.asarray(self.alphabet)[state]


InputModel = GaussConstant | FiniteConstant | TelegraphMarkov


def sample_inputs(model, grid: TimeGrid, seed: int, replicates) -> np.ndarray:
    """Input paths for a batch of replicates, shape (len(replicates), N+1).

    Uses the input stream key, disjoint from the noise streams, so X is
    independent of W by construction.
    """
    out = np.empty((len(replicates), grid.n_steps + 1))
    for i, rep in enumerate(replicates):
        out[i] = model._draw(philox(seed, INPUT_STREAM, rep), grid)
    return out


def sample_input(model, grid: TimeGrid, seed: int, replicate: int) -> Path:
    return Path(grid, sample_inputs(model, grid, seed, [replicate])[0])


def enumerate_support(model, grid: TimeGrid):
    """Exact support of the input law on the grid.

    FiniteConstant gives a list of (constant path, probability); a telegraph
    chain gives its TransitionStructure; Gaussian inputs give None.
    """
    if isinstance(model, FiniteConstant):
        return [(Path(grid, np.full(grid.n_steps + 1, v)), p) for v, p in zip(model.values, model.probs)]
    if isinstance(model, TelegraphMarkov):
        return TransitionStructure(model.alphabet, model.transition_matrix(grid.dt), np.asarray(model.initial))
    return None


# -- catalog functionals ------------------------------------------------------

def current_input(k, f, g):
    return f[..., k]


def unit_diffusion(k, g):
    return np.ones(g.shape[:-1])


def feedback_drift(k, f, g, beta):
    return f[..., k] - beta * g[..., k]


def modulation(k, g, gamma):
    return 1.0 + gamma * np.sin(g[..., k])


def modulated_drift(k, f, g, gamma):
    return f[..., k] * (1.0 + gamma * np.sin(g[..., k]))


def awgn_system(name="awgn"):
    return FunctionalSystem(name, current_input, unit_diffusion, 1.0, awgn_form=True)


def feedback_system(beta=0.5):
    return FunctionalSystem("awgn-feedback", partial(feedback_drift, beta=beta), unit_diffusion, 1.0)


def modulated_system(gamma=0.5):
    if not 0 <= gamma < 1:
        raise InvalidModel(f"modulation depth must lie in [0, 1), got {gamma}")
    return FunctionalSystem(
        "modulated-bpsk", partial(modulated_drift, gamma=gamma), partial(modulation, gamma=gamma), (1.0 - gamma) ** 2
    )


@dataclass(frozen=True)
class SystemCatalogEntry:
    id: str
    system: FunctionalSystem
    input: object
    expected_class: str
    oracle: str
    params: dict = field(default_factory=dict)


BPSK = {1.0: 0.5, -1.0: 0.5}
CATALOG_IDS = ("awgn-gauss", "awgn-bpsk", "telegraph-awgn", "awgn-feedback", "modulated-bpsk", "shifted-positive")


def build_entry(entry_id: str, sigma2=1.0, beta=0.5, gamma=0.5, lam=1.0, alphabet=None, input_model=None):
    """Catalog entry ``entry_id`` with optional parameter overrides.

    ``alphabet`` is a value->probability mapping for finite inputs or a pair of
    states for the telegraph chain; ``input_model`` replaces the input outright.
    """
    if entry_id == "awgn-gauss":
        entry = SystemCatalogEntry(entry_id, awgn_system(entry_id), GaussConstant(sigma2), "StrongSnr", "closed_form",
                                   {"sigma2": sigma2})
    elif entry_id == "awgn-bpsk":
        entry = SystemCatalogEntry(entry_id, awgn_system(entry_id), FiniteConstant.from_mapping(alphabet or BPSK),
                                   "StrongSnr", "quadrature")
    elif entry_id == "telegraph-awgn":
        entry = SystemCatalogEntry(entry_id, awgn_system(entry_id),
                                   TelegraphMarkov(tuple(alphabet) if alphabet else (1.0, -1.0), lam),
                                   "StrongSnr", "grid_filter", {"lam": lam})
    elif entry_id == "awgn-feedback":
        entry = SystemCatalogEntry(entry_id, feedback_system(beta), FiniteConstant.from_mapping(alphabet or BPSK),
                                   "General", "none", {"beta": beta})
    elif entry_id == "modulated-bpsk":
        entry = SystemCatalogEntry(entry_id, modulated_system(gamma), FiniteConstant.from_mapping(alphabet or BPSK),
                                   "StrongSnr", "z_equivalence", {"gamma": gamma})
    elif entry_id == "shifted-positive":
        entry = SystemCatalogEntry(entry_id, awgn_system(entry_id),
                                   FiniteConstant.from_mapping(alphabet or {0.5: 0.5, 1.5: 0.5}),
                                   "StrongSnr", "quadrature")
    else:
        raise KeyError(f"unknown catalog id {entry_id!r}; known: {', '.join(CATALOG_IDS)}")
    if input_model is not None:
        entry = SystemCatalogEntry(entry.id, entry.system, input_model, entry.expected_class, entry.oracle, entry.params)
    return entry


def catalog(overrides: Optional[dict] = None) -> list:
    """All six catalog entries; ``overrides`` maps id -> keyword overrides."""
    overrides = overrides or {}
    return [build_entry(i, **overrides.get(i, {})) for i in CATALOG_IDS]
