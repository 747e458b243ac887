"""SNR-class probes, the coupled monotonicity test and the Z-transform.

Verdicts come from sampled probes, so a StrongSnr verdict means "no
counterexample found", never a proof.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .estimate import diffusion_path, drift_path
from .inputs import sample_inputs
from .sde import PROBE_STREAM, ProbeReport, TimeGrid, brownian_increments, philox, random_paths, simulate_batch

DEFAULT_R_PAIRS = ((0.5, 1.0), (1.0, 2.0), (2.0, 4.0))
DEFAULT_PROBES = 1000
DEFAULT_COUPLED_REPLICATES = 200
# relative tolerance for "equal" phi values; only absorbs rounding in F/G
PHI_RTOL = 1e-12


class SnrClass(str, enum.Enum):
    GENERAL = "General"
    QUASI_SNR = "QuasiSnr"
    SNR = "Snr"
    STRONG_SNR = "StrongSnr"

    def __str__(self):
        return self.value


@dataclass
class SnrClassReport:
    verdict: SnrClass
    evidence: list = field(default_factory=list)
    caveat: str = "probabilistic"

    def to_dict(self):
        return {
            "verdict": str(self.verdict),
            "caveat": self.caveat,
            "note": "verdict is inferred from sampled probes, not proven",
            "evidence": [e.to_dict() for e in self.evidence],
        }


def _phi(system, k, f, g):
    return system.F(k, f, g) / system.G(k, g)


def _agree(a, b, mode):
    if mode == "square":
        a, b = a * a, b * b
        rtol = 2.5 * PHI_RTOL
    else:
        rtol = PHI_RTOL
    return abs(a - b) <= rtol * max(abs(a), abs(b))


def probe_phi_independence(system, grid: TimeGrid, n_probes: int = DEFAULT_PROBES, seed: int = 0,
                           mode: str = "value") -> ProbeReport:
    """Look for output paths g1 != g2 with phi(k, f, g1) != phi(k, f, g2).

    Half the probes use an unrelated second path, half bump the first path at
    one index <= k (bumps after k are invisible to a non-anticipative
    functional).  Both modes draw identical probe inputs.
    """
    if mode not in ("value", "square"):
        raise ValueError(f"mode must be 'value' or 'square', got {mode!r}")
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = philox(seed, PROBE_STREAM, 1)
    name = f"phi_independence_{mode}"
    for i in range(n_probes):
        k = int(rng.integers(0, grid.n_steps + 1))
        f = random_paths(rng, grid, 1, start_at_zero=False)[0]
        g1, g2 = random_paths(rng, grid, 2)
        if rng.random() < 0.5 and k >= 1:
            g2 = g1.copy()
            g2[int(rng.integers(1, k + 1))] += rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 5.0)
        a, b = float(_phi(system, k, f, g1)), float(_phi(system, k, f, g2))
        if not _agree(a, b, mode):
            return ProbeReport(name, i + 1, False, {"k": k, "phi": [a, b]})
    return ProbeReport(name, n_probes, True)


def coupled_monotonicity_test(system, input_model, r_pairs=DEFAULT_R_PAIRS, n_replicates=DEFAULT_COUPLED_REPLICATES,
                              grid: TimeGrid = None, seed: int = 0) -> ProbeReport:
    """Shared-noise check of r1 phi^2(Y^r1) <= r2 phi^2(Y^r2) and of Y^r1 <= Y^r2.

    The verdict rests on the r phi^2 ordering only; output ordering is
    reported as evidence.
    """
    reps = range(n_replicates)
    x = sample_inputs(input_model, grid, seed, reps)
    dW = brownian_increments(grid, seed, reps)
    n = grid.n_steps
    per_pair = []
    total_phi_viol = 0
    for r1, r2 in r_pairs:
        if r2 < r1:
            raise ValueError(f"r pair ({r1}, {r2}) is not ascending")
        y1, ab1 = simulate_batch(system, x, r1, dW, grid)
        y2, ab2 = simulate_batch(system, x, r2, dW, grid)
        ok = ~(ab1 | ab2)
        y1, y2, xo = y1[ok], y2[ok], x[ok]
        # near-explosive paths may square to inf; the ordering test treats that as equal
        with np.errstate(over="ignore"):
            e1 = r1 * (drift_path(system, xo, y1, n) / diffusion_path(system, y1, n)) ** 2
            e2 = r2 * (drift_path(system, xo, y2, n) / diffusion_path(system, y2, n)) ** 2
        phi_viol = int(np.sum(np.any(e1 > e2 * (1 + PHI_RTOL), axis=-1)))
        out_viol = int(np.sum(np.any(y1 > y2, axis=-1)))
        total_phi_viol += phi_viol
        per_pair.append({"r1": r1, "r2": r2, "replicates": int(ok.sum()),
                         "r_phi2_violations": phi_viol, "output_ordering_violations": out_viol})
    witness = next((p for p in per_pair if p["r_phi2_violations"]), None)
    return ProbeReport("coupled_monotonicity", n_replicates, total_phi_viol == 0, witness, {"pairs": per_pair})


def classify_system(system, input_model, grid: TimeGrid, seed: int = 0, n_probes: int = DEFAULT_PROBES,
                    r_pairs=DEFAULT_R_PAIRS, n_replicates: int = DEFAULT_COUPLED_REPLICATES) -> SnrClassReport:
    """Strongest class whose probe finds no counterexample."""
    evidence = []
    value = probe_phi_independence(system, grid, n_probes, seed, "value")
    evidence.append(value)
    if value.passed:
        return SnrClassReport(SnrClass.STRONG_SNR, evidence)
    square = probe_phi_independence(system, grid, n_probes, seed, "square")
    evidence.append(square)
    if square.passed:
        return SnrClassReport(SnrClass.SNR, evidence)
    coupled = coupled_monotonicity_test(system, input_model, r_pairs, n_replicates, grid, seed)
    evidence.append(coupled)
    return SnrClassReport(SnrClass.QUASI_SNR if coupled.passed else SnrClass.GENERAL, evidence)


@dataclass(frozen=True, eq=False)
class ZPath:
    values: np.ndarray


def z_transform(system, y, grid: TimeGrid = None) -> ZPath:
    """z_0 = 0, dz_k = dy_k / G(k, y): the output re-expressed as an AWGN channel output."""
    y = np.asarray(getattr(y, "values", y), dtype=float)
    g = diffusion_path(system, y, y.shape[-1] - 1)
    z = np.zeros_like(y)
    np.cumsum(np.diff(y, axis=-1) / g[..., :-1], axis=-1, out=z[..., 1:])
    return ZPath(z)


def z_inverse(system, z) -> np.ndarray:
    """Rebuild y from z with y_{k+1} = y_k + G(k, y) dz_k."""
    z = np.asarray(getattr(z, "values", z), dtype=float)
    dz = np.diff(z, axis=-1)
    y = np.zeros_like(z)
    for k in range(z.shape[-1] - 1):
        y[..., k + 1] = y[..., k] + system.G(k, y) * dz[..., k]
    return y
