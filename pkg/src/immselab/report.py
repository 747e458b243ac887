"""Result files: long-form CSV tables, JSON reports, plot series and figures.

Floats are written with ``repr`` so a value read back parses to the same
double.  Plot series are copied token-for-token from the CSV tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path as FsPath

import numpy as np

SURFACE_HEADER = ("t", "s", "r", "cmmse", "cmmse_se", "ncmmse", "ncmmse_se")
INFO_HEADER = ("r", "t", "estimator", "value", "se")
SURFACE_FILE = "mmse_surface.csv"
INFO_FILE = "info_curve.csv"
IDENTITY_FILE = "identity_report.json"
CLASS_FILE = "class_report.json"
MANIFEST_FILE = "manifest.json"


def fmt(x) -> str:
    return repr(float(x))


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_surface_csv(path, surface):
    """One row per (t, s, r) with s <= t; cmmse columns repeat cmmse(t, r)."""
    times = [fmt(t) for t in surface.times]
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(SURFACE_HEADER)
        for i, r in enumerate(surface.r_values):
            rs = fmt(r)
            for k, t in enumerate(times):
                c, cse = fmt(surface.cmmse[i, k]), fmt(surface.cmmse_se[i, k])
                nc, nse = surface.ncmmse[i, k], surface.ncmmse_se[i, k]
                for j in range(k + 1):
                    w.writerow((t, times[j], rs, c, cse, fmt(nc[j]), fmt(nse[j])))


def write_info_csv(path, curve):
    """I_i(t, r) for the duncan and direct estimators at every t; gsv at t = T only."""
    times = [fmt(t) for t in curve.times]
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(INFO_HEADER)
        for i, r in enumerate(curve.r_values):
            rs = fmt(r)
            for name in ("duncan", "direct"):
                for k, t in enumerate(times):
                    w.writerow((rs, t, name, fmt(curve.inst[name][i, k]), fmt(curve.inst_se[name][i, k])))
            if "gsv" in curve.mi:
                w.writerow((rs, times[-1], "gsv", fmt(curve.mi["gsv"][i]), fmt(curve.mi_se["gsv"][i])))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    # JSON has no nan/inf
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(_clean(obj), fh, indent=2, default=_json_default, allow_nan=False)
        fh.write("\n")


def sha256(path) -> str:
    return hashlib.sha256(FsPath(path).read_bytes()).hexdigest()


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _blocks(fh, blocks, columns):
    # gnuplot-style: blocks separated by two blank lines, each with a comment header
    first = True
    for label, rows in blocks:
        if not first:
            fh.write("\n\n")
        first = False
        fh.write(f"# {label}\n# {' '.join(columns)}\n")
        for row in rows:
            fh.write(" ".join(row) + "\n")


def plot_series(out_dir):
    """Build the plot series from the CSV tables in ``out_dir``.

    Returns {name: (columns, [(label, rows)])}; every value is the string
    token from the CSV.
    """
    out_dir = FsPath(out_dir)
    _, srows = read_csv(out_dir / SURFACE_FILE)
    _, irows = read_csv(out_dir / INFO_FILE)
    series = {}

    cm = {}
    for t, s, r, c, *_ in srows:
        if t == s:
            cm.setdefault(r, []).append((t, c))
    series["cmmse_vs_t"] = (("t", "cmmse"), [(f"r = {r}", rows) for r, rows in cm.items()])

    last_t = irows[-1][1] if irows else None
    by_est, by_r = {}, {}
    for r, t, est, value, se in irows:
        if t == last_t:
            by_est.setdefault(est, []).append((r, value, se))
        if est in ("duncan", "direct"):
            by_r.setdefault((r, est), []).append((t, value, se))
    series["i_vs_r"] = (("r", "I", "se"), [(f"estimator = {e}", rows) for e, rows in by_est.items()])
    series["ii_vs_t"] = (("t", "I_i", "se"),
                         [(f"r = {r}, estimator = {e}", rows) for (r, e), rows in by_r.items()])

    ident = out_dir / IDENTITY_FILE
    if ident.exists():
        report = json.loads(ident.read_text())
        worst = {}
        for rec in report["records"]:
            if rec["boundary"] or rec["residual"] is None:
                continue
            key = (rec["family"], rec["r"])
            worst[key] = max(worst.get(key, 0.0), abs(rec["residual"]))
        fams = {}
        for (fam, r), v in worst.items():
            fams.setdefault(fam, []).append((repr(r), repr(v)))
        series["residuals_vs_r"] = (("r", "max_abs_residual"), [(f"family = {f}", rows) for f, rows in fams.items()])
    return series


def write_plotdata(out_dir, figures=True):
    """Write ``<name>.dat`` for each series and, if asked, ``<name>.png``."""
    out_dir = FsPath(out_dir)
    written = []
    series = plot_series(out_dir)
    for name, (columns, blocks) in series.items():
        path = out_dir / f"{name}.dat"
        with open(path, "w", newline="\n") as fh:
            _blocks(fh, blocks, columns)
        written.append(path)
    if figures:
        written += render_figures(out_dir, series)
    return written


AXES = {
    "cmmse_vs_t": ("t", "cmmse(t, r)", False),
    "i_vs_r": ("r", "I(r)", False),
    "ii_vs_t": ("t", "I_i(t, r)", False),
    "residuals_vs_r": ("r", "max |residual|", True),
}


def render_figures(out_dir, series):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for name, (_, blocks) in series.items():
        xlabel, ylabel, logy = AXES[name]
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for label, rows in blocks:
            x = np.array([float(row[0]) for row in rows])
            y = np.array([float(row[1]) for row in rows])
            ax.plot(x, np.abs(y) if logy else y, marker="o" if len(x) < 30 else None, ms=3, lw=1.2, label=label)
        if logy:
            ax.set_yscale("symlog", linthresh=1e-6)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(blocks) <= 12:
            ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        path = FsPath(out_dir) / f"{name}.png"
        # fixed metadata keeps the PNG bytes stable across runs
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
