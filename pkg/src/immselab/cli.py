"""Command line runner: run, verify, classify, plotdata.

Exit codes: 0 success, 1 identity verification failed, 2 config error,
3 unsupported input model, 4 every replicate aborted, 5 missing results.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path as FsPath

from . import __version__
from .classify import classify_system
from .config import load_config
from .errors import ConfigError, TooFewReplicates, UnsupportedInput
from .estimate import _require_supported
from .mmse import estimate_mmse_surface, identity_residuals, info_curve
from . import report

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_UNSUPPORTED, EXIT_ABORTED, EXIT_MISSING = range(6)

log = logging.getLogger("immselab")


class Session:
    """Output directory plus the manifest being built for it."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = FsPath(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / report.MANIFEST_FILE
        old = json.loads(path.read_text()) if path.exists() else {}
        self.stages = old.get("stages_seconds", {})
        self.files = old.get("files", {})
        self.aborted = old.get("aborted_replicates", {})

    def stage(self, name, seconds):
        self.stages[name] = round(seconds, 6)

    def emitted(self, *paths):
        for p in paths:
            self.files[FsPath(p).name] = report.sha256(p)

    def finish(self):
        # drop entries for files that no longer exist
        files = {k: v for k, v in sorted(self.files.items()) if (self.out / k).exists()}
        report.write_json(self.out / report.MANIFEST_FILE, {
            "artifact": "immselab",
            "version": __version__,
            "config": self.cfg.to_dict(),
            "stages_seconds": self.stages,
            "aborted_replicates": self.aborted,
            "files": files,
        })


def _classify(cfg):
    entry = cfg.entry()
    return classify_system(entry.system, entry.input, cfg.time_grid(), seed=cfg.master_seed, n_probes=cfg.probe_budget)


def _ensemble(cfg, session):
    spec = cfg.ensemble_spec()
    _require_supported(spec.entry.system, spec.entry.input)
    t0 = time.perf_counter()
    verdict = _classify(cfg).verdict
    session.stage("classify", time.perf_counter() - t0)
    t0 = time.perf_counter()
    result = estimate_mmse_surface(spec)
    session.stage("ensemble", time.perf_counter() - t0)
    session.aborted = {"count": result.surface.n_aborted, "used": result.surface.n_used}
    t0 = time.perf_counter()
    surface_path = session.out / report.SURFACE_FILE
    info_path = session.out / report.INFO_FILE
    report.write_surface_csv(surface_path, result.surface)
    report.write_info_csv(info_path, info_curve(result, verdict))
    session.emitted(surface_path, info_path)
    session.stage("write_tables", time.perf_counter() - t0)
    return result, verdict


def cmd_run(cfg, session, args):
    result, verdict = _ensemble(cfg, session)
    curve = info_curve(result, verdict)
    for i, r in enumerate(curve.r_values):
        parts = [f"{k}={curve.mi[k][i]:.6f}" for k in curve.mi]
        _say(args, f"r={r:g} " + " ".join(parts))
    return EXIT_OK


def cmd_verify(cfg, session, args):
    result, verdict = _ensemble(cfg, session)
    t0 = time.perf_counter()
    rep = identity_residuals(result, verdict, cfg.tolerances["absolute"], cfg.tolerances["se_multiplier"])
    path = session.out / report.IDENTITY_FILE
    report.write_json(path, rep.to_dict())
    session.emitted(path)
    session.stage("verify", time.perf_counter() - t0)
    for fam, summary in rep.family_summary().items():
        _say(args, f"{fam}: {summary['status']} (checked {summary['checked']}, failed {summary['failed']})")
    if not rep.passed:
        print("identity verification failed: " + ", ".join(rep.failing_families()), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_classify(cfg, session, args):
    t0 = time.perf_counter()
    rep = _classify(cfg)
    session.stage("classify", time.perf_counter() - t0)
    path = session.out / report.CLASS_FILE
    out = rep.to_dict()
    out["system_id"] = cfg.system_id
    report.write_json(path, out)
    session.emitted(path)
    _say(args, f"{cfg.system_id}: {rep.verdict}")
    return EXIT_OK


def cmd_plotdata(cfg, session, args):
    missing = [f for f in (report.SURFACE_FILE, report.INFO_FILE) if not (session.out / f).exists()]
    if missing:
        print(f"missing results in {session.out}: {', '.join(missing)}; run 'immselab run' first", file=sys.stderr)
        return EXIT_MISSING
    t0 = time.perf_counter()
    written = report.write_plotdata(session.out, figures=not args.no_figures)
    session.emitted(*written)
    session.stage("plotdata", time.perf_counter() - t0)
    for p in written:
        _say(args, str(p))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "classify": cmd_classify, "plotdata": cmd_plotdata}


def _say(args, msg):
    if not args.quiet:
        print(msg)


def build_parser():
    p = argparse.ArgumentParser(prog="immselab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--seed", type=int, help="override master_seed")
        s.add_argument("--out", help="override the outputs directory")
        s.add_argument("--replicates", type=int, help="override the number of replicates M")
        s.add_argument("--workers", type=int, help="override the worker count")
        s.add_argument("--quiet", action="store_true")
        if name == "plotdata":
            s.add_argument("--no-figures", action="store_true", help="write .dat series only")
    return p


def _apply_overrides(cfg, args):
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        cfg.master_seed = args.seed
    if args.replicates is not None:
        if args.replicates < 2:
            raise ConfigError("--replicates", "must be >= 2")
        cfg.replicates = args.replicates
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg.workers = args.workers
    if args.out:
        cfg.outputs = args.out
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        session = Session(cfg, cfg.outputs)
        code = COMMANDS[args.command](cfg, session, args)
        session.finish()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedInput as exc:
        print(f"unsupported input model: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except TooFewReplicates as exc:
        print(f"no usable replicates: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
