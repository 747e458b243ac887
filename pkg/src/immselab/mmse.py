"""Monte Carlo ensembles: MMSE surfaces, mutual-information estimators and identity residuals.

Replicates are processed in fixed-size chunks.  Each chunk returns sums and
sums of squares of per-replicate statistics; chunks are reduced in index
order, so results do not depend on how many workers evaluated them.  Every
identity residual is formed per replicate before averaging, which makes its
standard error the paired one (common random numbers across r and t).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .classify import SnrClass
from .errors import NotStrongSnr, TooFewReplicates
from .estimate import _require_supported, analyse_batch
from .inputs import SystemCatalogEntry, sample_inputs
from .sde import TimeGrid, brownian_increments, simulate_batch

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 100
FAMILIES = ("duncan", "gsv", "cor1", "d1_time", "d1_snr", "cor3_mixed")
SNR_GATED = ("gsv", "cor1", "d1_snr", "cor3_mixed")
# "conditional": per-replicate posterior variance of phi and E[log-RN | y];
# "raw": squared deviations (phi - E[phi | y])^2 and the log-RN at the true input.
ESTIMATORS = ("conditional", "raw")


class Estimate(NamedTuple):
    value: float
    se: float


@dataclass(frozen=True)
class EnsembleSpec:
    entry: SystemCatalogEntry
    grid: TimeGrid
    r_grid: tuple
    n_replicates: int
    master_seed: int = 0
    common_noise: bool = True
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK
    estimator: str = "conditional"

    def __post_init__(self):
        r = tuple(float(v) for v in self.r_grid)
        object.__setattr__(self, "r_grid", r)
        if not r:
            raise ValueError("r_grid must not be empty")
        if any(v < 0 or not np.isfinite(v) for v in r):
            raise ValueError("r_grid values must be finite and nonnegative")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("r_grid must be strictly ascending (distinct values)")
        if self.n_replicates < 2:
            raise ValueError("n_replicates must be >= 2")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be >= 1")

    @property
    def r_values(self) -> tuple:
        """r_grid with the origin added; r = 0 anchors integrals over r."""
        return tuple(sorted(set(self.r_grid) | {0.0}))


def trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    """W[t, s]: trapezoid weights for integrating over s in [0, t_t]."""
    n = grid.n_steps
    w = np.tril(np.full((n + 1, n + 1), grid.dt))
    idx = np.arange(n + 1)
    w[idx, idx] *= 0.5
    w[:, 0] *= 0.5
    w[0, 0] = 0.0
    return w


def cumulative_trapezoid(values, dt):
    out = np.zeros_like(values)
    np.cumsum(0.5 * dt * (values[..., 1:] + values[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def _trapz_r(values, r_values, upto):
    """Trapezoid over r_values[0..upto] along the first axis."""
    if upto == 0:
        return np.zeros_like(values[0])
    h = np.diff(r_values[: upto + 1])
    v = values[: upto + 1]
    return np.tensordot(h, 0.5 * (v[1:] + v[:-1]), axes=(0, 0))


def r_neighbours(r_grid):
    """(index, lower, upper, boundary) for finite differences over the user r grid."""
    out = []
    n = len(r_grid)
    if n < 2:
        return out
    for i in range(n):
        lo, hi = max(i - 1, 0), min(i + 1, n - 1)
        out.append((i, lo, hi, i in (0, n - 1)))
    return out


class _Accumulator:
    def __init__(self):
        self.sums = {}

    def add(self, name, values):
        values = np.asarray(values, dtype=float)
        s, q = values.sum(axis=0), (values * values).sum(axis=0)
        if name in self.sums:
            a, b = self.sums[name]
            self.sums[name] = (a + s, b + q)
        else:
            self.sums[name] = (s, q)

    def merge(self, other):
        for name, (s, q) in other.sums.items():
            if name in self.sums:
                a, b = self.sums[name]
                self.sums[name] = (a + s, b + q)
            else:
                self.sums[name] = (s, q)


def _chunk(spec: EnsembleSpec, reps):
    entry, grid = spec.entry, spec.grid
    system, model = entry.system, entry.input
    n, dt, T = grid.n_steps, grid.dt, grid.horizon
    r_values = spec.r_values
    x = sample_inputs(model, grid, spec.master_seed, reps)
    common = brownian_increments(grid, spec.master_seed, reps) if spec.common_noise else None
    ys = []
    aborted = np.zeros(len(reps), dtype=bool)
    for r in r_values:
        if common is None:
            dW = brownian_increments(grid, spec.master_seed, reps, sub=(1, int(np.float64(r).view(np.uint64))))
        else:
            dW = common
        y, ab = simulate_batch(system, x, r, dW, grid)
        ys.append(y)
        aborted |= ab
    keep = ~aborted
    acc = _Accumulator()
    m = int(keep.sum())
    if m == 0:
        return acc, 0, int(aborted.sum())
    x = x[keep]
    W = trapezoid_weights(grid)
    lower = np.tril(np.ones((n + 1, n + 1)))
    inner = np.arange(1, n)

    causal, lrn, nc_int, nc_dt = [], [], [], []
    for i, r in enumerate(r_values):
        a = analyse_batch(system, model, x, ys[i][keep], r, grid)
        if spec.estimator == "conditional":
            err, info = a.post_var, a.log_rn_cond
        else:
            err, info = (a.phi[:, None, :] - a.cond) ** 2 * lower, a.log_rn
        c = np.diagonal(err, axis1=1, axis2=2).copy()
        acc.add(("cmmse", i), c)
        acc.add(("ncmmse", i), err)
        acc.add(("direct", i), info)
        acc.add(("log_rn", i), a.log_rn)
        acc.add(("martingale", i), np.exp(-a.log_rn))
        acc.add(("duncan", i), 0.5 * r * cumulative_trapezoid(c, dt))
        ni = np.einsum("mts,ts->mt", err, W)
        # d/dt of ncmmse(t, s) at fixed s: central in t, forward on the diagonal s = t
        d = (err[:, 2:, :] - err[:, :-2, :]) / (2 * dt)
        d[:, inner - 1, inner] = (err[:, inner + 1, inner] - err[:, inner, inner]) / dt
        nd = np.full((m, n + 1), np.nan)
        nd[:, 1:n] = np.einsum("mts,ts->mt", d, W[1:n])
        d1_time = (info[:, 2:] - info[:, :-2]) / (2 * dt) - 0.5 * r * c[:, 1:n]
        acc.add(("d1_time", i), d1_time)
        causal.append(c)
        lrn.append(info)
        nc_int.append(ni)
        nc_dt.append(nd)

    causal, lrn, nc_int, nc_dt = map(np.asarray, (causal, lrn, nc_int, nc_dt))
    rv = np.asarray(r_values)
    avg_c = np.trapezoid(causal, dx=dt, axis=-1) / T
    avg_nc = nc_int[:, :, n] / T
    for i, r in enumerate(r_values):
        acc.add(("duncan_res", i), lrn[i][:, n] - 0.5 * r * np.trapezoid(causal[i], dx=dt, axis=-1))
        acc.add(("gsv", i), 0.5 * _trapz_r(nc_int[:, :, n], rv, i))
        if r > 0:
            acc.add(("cor1", i), avg_c[i] - _trapz_r(avg_nc, rv, i) / r)
    idx = [r_values.index(r) for r in spec.r_grid]
    for j, lo, hi, _ in r_neighbours(spec.r_grid):
        i, a_, b_ = idx[j], idx[lo], idx[hi]
        h = rv[b_] - rv[a_]
        d_lrn = (lrn[b_] - lrn[a_]) / h
        acc.add(("gsv_res", i), d_lrn[:, n] - 0.5 * nc_int[i][:, n])
        acc.add(("d1_snr", i), d_lrn - 0.5 * nc_int[i])
        acc.add(("cor3_lhs", i), rv[i] * (causal[b_] - causal[a_]) / h)
        acc.add(("cor3_mixed", i), rv[i] * (causal[b_] - causal[a_]) / h - nc_dt[i])
        acc.add(("d_direct_dr", i), d_lrn)
        acc.add(("nc_dt_int", i), nc_dt[i])
    return acc, m, int(aborted.sum())


@dataclass
class MmseSurface:
    """cmmse[r, t] and ncmmse[r, t, s] (nan for s > t) with standard errors."""

    r_values: np.ndarray
    times: np.ndarray
    cmmse: np.ndarray
    cmmse_se: np.ndarray
    ncmmse: np.ndarray
    ncmmse_se: np.ndarray
    n_used: int
    n_aborted: int

    def r_index(self, r):
        hits = np.flatnonzero(np.isclose(self.r_values, r, rtol=0, atol=1e-12))
        if not len(hits):
            raise KeyError(f"r = {r} not on the surface r grid {self.r_values.tolist()}")
        return int(hits[0])


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    surface: MmseSurface
    stats: dict = field(repr=False, default_factory=dict)
    wall_seconds: float = 0.0

    def stat(self, name, r) -> tuple:
        return self.stats[(name, self.surface.r_index(r))]


def _mean_se(s, q, n):
    mean = s / n
    if n < 2:
        return mean, np.full_like(mean, np.nan)
    var = np.maximum(q - n * mean * mean, 0.0) / (n - 1)
    return mean, np.sqrt(var / n)


def estimate_mmse_surface(spec: EnsembleSpec) -> EnsembleResult:
    """Run the ensemble and reduce it; the MmseSurface is ``result.surface``."""
    import time

    _require_supported(spec.entry.system, spec.entry.input)
    start = time.perf_counter()
    chunks = [range(a, min(a + spec.chunk_size, spec.n_replicates))
              for a in range(0, spec.n_replicates, spec.chunk_size)]
    work = lambda reps: _chunk(spec, reps)
    if spec.workers == 1:
        results = map(work, chunks)
    else:
        pool = ThreadPoolExecutor(max_workers=spec.workers)
        results = pool.map(work, chunks)
    total = _Accumulator()
    used = aborted = 0
    for acc, m, ab in results:
        total.merge(acc)
        used += m
        aborted += ab
    if spec.workers > 1:
        pool.shutdown()
    if used == 0:
        raise TooFewReplicates(f"all {spec.n_replicates} replicates aborted (non-finite state)")
    if aborted:
        log.warning("%d of %d replicates aborted and were dropped at every r", aborted, spec.n_replicates)
    stats = {k: _mean_se(s, q, used) for k, (s, q) in total.sums.items()}
    R = len(spec.r_values)
    n = spec.grid.n_steps
    upper = ~np.tril(np.ones((n + 1, n + 1), dtype=bool))
    cm = np.array([stats[("cmmse", i)][0] for i in range(R)])
    cse = np.array([stats[("cmmse", i)][1] for i in range(R)])
    nm = np.array([np.where(upper, np.nan, stats[("ncmmse", i)][0]) for i in range(R)])
    nse = np.array([np.where(upper, np.nan, stats[("ncmmse", i)][1]) for i in range(R)])
    surface = MmseSurface(np.asarray(spec.r_values), spec.grid.times, cm, cse, nm, nse, used, aborted)
    return EnsembleResult(spec, surface, stats, time.perf_counter() - start)


def run_ensemble(spec: EnsembleSpec) -> EnsembleResult:
    return estimate_mmse_surface(spec)


def mi_duncan(result: EnsembleResult, r: float) -> Estimate:
    """(r/2) times the trapezoid integral of cmmse(., r) over [0, T]."""
    i = result.surface.r_index(r)
    value = 0.5 * result.surface.r_values[i] * np.trapezoid(result.surface.cmmse[i], dx=result.spec.grid.dt)
    return Estimate(float(value), float(result.stats[("duncan", i)][1][-1]))


def mi_direct(result: EnsembleResult, r: float) -> Estimate:
    """Ensemble mean of the log-RN derivative at T."""
    mean, se = result.stat("direct", r)
    return Estimate(float(mean[-1]), float(se[-1]))


def mi_gsv(result: EnsembleResult, r: float, verdict) -> Estimate:
    """(1/2) int_0^r int_0^T ncmmse(T, s, u) ds du, trapezoid in both variables.

    Refused unless the system is strong-SNR: the identity behind it does not
    hold otherwise.
    """
    if SnrClass(verdict) is not SnrClass.STRONG_SNR:
        raise NotStrongSnr(f"mi_gsv needs a StrongSnr system, verdict was {SnrClass(verdict).value}")
    s = result.surface
    i = s.r_index(r)
    dt = result.spec.grid.dt
    inner = np.array([np.trapezoid(s.ncmmse[j, -1], dx=dt) for j in range(len(s.r_values))])
    return Estimate(float(0.5 * _trapz_r(inner, s.r_values, i)), float(result.stats[("gsv", i)][1]))


def instantaneous_info(result: EnsembleResult, t_index: int, r: float, estimator: str = "duncan") -> Estimate:
    """I_i(t_k, r): partial Duncan integral up to t_k, or the log-RN mean at t_k."""
    i = result.surface.r_index(r)
    if estimator == "duncan":
        dt = result.spec.grid.dt
        value = 0.5 * result.surface.r_values[i] * np.trapezoid(result.surface.cmmse[i, : t_index + 1], dx=dt)
        return Estimate(float(value), float(result.stats[("duncan", i)][1][t_index]))
    if estimator == "direct":
        mean, se = result.stats[("direct", i)]
        return Estimate(float(mean[t_index]), float(se[t_index]))
    raise ValueError(f"unknown estimator {estimator!r}")


@dataclass
class InfoCurve:
    """I(r) per estimator and I_i(t, r) for the duncan and direct estimators."""

    r_values: np.ndarray
    times: np.ndarray
    mi: dict
    mi_se: dict
    inst: dict
    inst_se: dict


def info_curve(result: EnsembleResult, verdict=None) -> InfoCurve:
    s = result.surface
    dt = result.spec.grid.dt
    R = len(s.r_values)
    inst = {"duncan": 0.5 * s.r_values[:, None] * cumulative_trapezoid(s.cmmse, dt),
            "direct": np.array([result.stats[("direct", i)][0] for i in range(R)])}
    inst_se = {"duncan": np.array([result.stats[("duncan", i)][1] for i in range(R)]),
               "direct": np.array([result.stats[("direct", i)][1] for i in range(R)])}
    mi = {k: v[:, -1].copy() for k, v in inst.items()}
    mi_se = {k: v[:, -1].copy() for k, v in inst_se.items()}
    if verdict is not None and SnrClass(verdict) is SnrClass.STRONG_SNR:
        g = [mi_gsv(result, r, verdict) for r in s.r_values]
        mi["gsv"] = np.array([e.value for e in g])
        mi_se["gsv"] = np.array([e.se for e in g])
    return InfoCurve(s.r_values, s.times, mi, mi_se, inst, inst_se)


@dataclass
class ResidualRecord:
    family: str
    r: float
    t: Optional[float]
    lhs: float
    rhs: float
    residual: float
    se: float
    tolerance: float
    passed: bool
    diagnostic: bool = False
    boundary: bool = False

    def to_dict(self):
        out = dict(self.__dict__)
        for k in ("lhs", "rhs", "residual", "se", "tolerance"):
            out[k] = _finite_or_none(out[k])
        return out


def _finite_or_none(v):
    return float(v) if v is not None and np.isfinite(v) else None


@dataclass
class IdentityResidualReport:
    system_id: str
    verdict: str
    records: list
    abs_tol: float
    se_multiplier: float

    def family_summary(self):
        out = {}
        for fam in FAMILIES:
            recs = [r for r in self.records if r.family == fam]
            checked = [r for r in recs if not r.diagnostic and not r.boundary]
            failed = [r for r in checked if not r.passed]
            worst = max(checked, key=lambda r: abs(r.residual) - r.tolerance, default=None)
            out[fam] = {
                "status": "diagnostic" if recs and all(r.diagnostic for r in recs) else (
                    "pass" if not failed else "fail"),
                "checked": len(checked),
                "failed": len(failed),
                "max_abs_residual": _finite_or_none(max((abs(r.residual) for r in checked), default=None)),
                "worst": worst.to_dict() if worst else None,
            }
        return out

    @property
    def passed(self):
        return all(v["status"] != "fail" for v in self.family_summary().values())

    def failing_families(self):
        return [k for k, v in self.family_summary().items() if v["status"] == "fail"]

    def to_dict(self):
        return {
            "system_id": self.system_id,
            "verdict": self.verdict,
            "tolerance_rule": {"absolute": self.abs_tol, "se_multiplier": self.se_multiplier},
            "passed": self.passed,
            "families": self.family_summary(),
            "records": [r.to_dict() for r in self.records],
        }


def identity_residuals(result: EnsembleResult, verdict, abs_tol: float = 0.01,
                       se_multiplier: float = 3.0) -> IdentityResidualReport:
    """Residuals of every identity with both sides, tolerance max(abs_tol, k * SE).

    Derivatives in r use neighbouring points of the user r grid (central in the
    interior, one-sided at its ends); derivatives in t use neighbouring grid
    points.  One-sided (boundary) values are reported but never gate.  For a
    system that is not strong-SNR the r-derivative families are diagnostics.
    """
    verdict = SnrClass(verdict)
    spec = result.spec
    s = result.surface
    st = result.stats
    grid = spec.grid
    n, dt, T = grid.n_steps, grid.dt, grid.horizon
    times = grid.times
    weak = verdict is not SnrClass.STRONG_SNR
    records = []

    def rec(fam, r, t, lhs, rhs, se, boundary=False):
        tol = max(abs_tol, se_multiplier * se) if np.isfinite(se) else abs_tol
        res = lhs - rhs
        diag = weak and fam in SNR_GATED
        records.append(ResidualRecord(fam, float(r), None if t is None else float(t), float(lhs), float(rhs),
                                      float(res), float(se), float(tol), bool(abs(res) <= tol), diag, boundary))

    direct = {i: st[("direct", i)][0] for i in range(len(s.r_values))}
    nc_int = lambda i: np.array([np.trapezoid(s.ncmmse[i, k, : k + 1], dx=dt) if k else 0.0 for k in range(n + 1)])
    for r in spec.r_grid:
        i = s.r_index(r)
        duncan = 0.5 * r * np.trapezoid(s.cmmse[i], dx=dt)
        rec("duncan", r, T, direct[i][n], duncan, st[("duncan_res", i)][1])
        if r > 0:
            avg_nc = np.array([np.trapezoid(s.ncmmse[j, n], dx=dt) / T for j in range(len(s.r_values))])
            rec("cor1", r, T, np.trapezoid(s.cmmse[i], dx=dt) / T, _trapz_r(avg_nc, s.r_values, i) / r,
                st[("cor1", i)][1])
        d1 = st[("d1_time", i)][1]
        for k in range(1, n):
            lhs = (direct[i][k + 1] - direct[i][k - 1]) / (2 * dt)
            rec("d1_time", r, times[k], lhs, 0.5 * r * s.cmmse[i, k], d1[k - 1])

    idx = [s.r_index(r) for r in spec.r_grid]
    for j, lo, hi, boundary in r_neighbours(spec.r_grid):
        i, a, b = idx[j], idx[lo], idx[hi]
        h = s.r_values[b] - s.r_values[a]
        r = s.r_values[i]
        ni = nc_int(i)
        rec("gsv", r, T, (direct[b][n] - direct[a][n]) / h, 0.5 * ni[n], st[("gsv_res", i)][1], boundary)
        d_dr = st[("d_direct_dr", i)][0]
        snr_se = st[("d1_snr", i)][1]
        for k in range(1, n + 1):
            rec("d1_snr", r, times[k], d_dr[k], 0.5 * ni[k], snr_se[k], boundary)
        lhs3 = st[("cor3_lhs", i)][0]
        rhs3 = st[("nc_dt_int", i)][0]
        se3 = st[("cor3_mixed", i)][1]
        for k in range(1, n):
            rec("cor3_mixed", r, times[k], lhs3[k], rhs3[k], se3[k], boundary)
    return IdentityResidualReport(spec.entry.id, verdict.value, records, abs_tol, se_multiplier)
