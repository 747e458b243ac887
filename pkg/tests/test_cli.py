import json
import subprocess
import sys
from pathlib import Path as FsPath

import pytest

from immselab import report
from immselab.cli import main
from immselab.config import ExperimentConfig, load_config, parse_config
from immselab.errors import ConfigError

SMALL = {"grid": {"T": 1.0, "N": 20}, "r_grid": [0.5, 1.0, 1.5], "replicates": 200, "master_seed": 3,
         "probe_budget": 200}


def write_config(tmp_path, name="cfg.json", **kw):
    data = {"system_id": "awgn-gauss", **SMALL, "outputs": str(tmp_path / "out")}
    data.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path, tmp_path / "out" if "outputs" not in kw else kw["outputs"]


def run_cli(*argv):
    return main([*argv, "--quiet"])


def test_csv_headers_are_exact(tmp_path):
    cfg, out = write_config(tmp_path)
    assert run_cli("run", "--config", str(cfg)) == 0
    with open(out / "mmse_surface.csv", newline="") as fh:
        assert fh.readline() == "t,s,r,cmmse,cmmse_se,ncmmse,ncmmse_se\n"
    with open(out / "info_curve.csv", newline="") as fh:
        assert fh.readline() == "r,t,estimator,value,se\n"


def test_run_writes_duncan_and_direct_rows_for_each_r(tmp_path):
    cfg, out = write_config(tmp_path)
    assert run_cli("run", "--config", str(cfg)) == 0
    assert {p.name for p in out.iterdir()} >= {"mmse_surface.csv", "info_curve.csv", "manifest.json"}
    _, rows = report.read_csv(out / "info_curve.csv")
    pairs = {(float(r), est) for r, t, est, *_ in rows}
    for r in (0.0, 0.5, 1.0, 1.5):
        assert (r, "duncan") in pairs and (r, "direct") in pairs
    # long-form surface: one row per (t, s <= t, r)
    _, srows = report.read_csv(out / "mmse_surface.csv")
    assert len(srows) == 4 * 21 * 22 // 2


def test_r_grid_zero_gives_zero_information(tmp_path):
    cfg, out = write_config(tmp_path, r_grid=[0])
    assert run_cli("run", "--config", str(cfg)) == 0
    _, rows = report.read_csv(out / "info_curve.csv")
    assert rows and all(float(v) == 0.0 for *_, v, se in rows)


def test_rerun_is_byte_identical(tmp_path):
    cfg, out = write_config(tmp_path, system_id="telegraph-awgn")
    assert run_cli("run", "--config", str(cfg)) == 0
    first = {f: (out / f).read_bytes() for f in ("mmse_surface.csv", "info_curve.csv")}
    assert run_cli("run", "--config", str(cfg), "--workers", "3") == 0
    assert first == {f: (out / f).read_bytes() for f in first}


def test_manifest_lists_every_file_with_its_digest(tmp_path):
    cfg, out = write_config(tmp_path)
    # the tiny grid may fail some identities; only the files matter here
    assert run_cli("verify", "--config", str(cfg)) in (0, 1)
    assert run_cli("plotdata", "--config", str(cfg)) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    emitted = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(manifest["files"]) == emitted
    for name, digest in manifest["files"].items():
        assert report.sha256(out / name) == digest
    assert {"classify", "ensemble", "verify", "plotdata"} <= set(manifest["stages_seconds"])
    assert manifest["config"]["system_id"] == "awgn-gauss"
    assert manifest["aborted_replicates"]["count"] == 0


CONFIGS = FsPath(__file__).resolve().parent.parent / "configs"


def test_verify_gauss_passes(tmp_path):
    out = tmp_path / "gauss"
    assert run_cli("verify", "--config", str(CONFIGS / "awgn-gauss.json"), "--out", str(out), "--workers", "4") == 0
    rep = json.loads((out / "identity_report.json").read_text())
    assert rep["passed"] and rep["verdict"] == "StrongSnr"
    assert all(v["status"] == "pass" for v in rep["families"].values())


def test_verify_feedback_reports_gsv_as_diagnostic(tmp_path):
    out = tmp_path / "feedback"
    assert run_cli("verify", "--config", str(CONFIGS / "awgn-feedback.json"), "--out", str(out), "--workers", "4") == 0
    rep = json.loads((out / "identity_report.json").read_text())
    assert rep["verdict"] == "General"
    assert rep["families"]["duncan"]["status"] == "pass"
    assert rep["families"]["gsv"]["status"] == "diagnostic"
    gsv = [r for r in rep["records"] if r["family"] == "gsv"]
    assert gsv and all(r["lhs"] is not None and r["rhs"] is not None for r in gsv)


def test_verify_with_forced_tolerance_fails_and_names_family(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, tolerances={"absolute": 1e-9, "se_multiplier": 0.0})
    assert run_cli("verify", "--config", str(cfg)) == 1
    err = capsys.readouterr().err
    assert "identity verification failed" in err and "duncan" in err


@pytest.mark.parametrize("sid,verdict", [("modulated-bpsk", "StrongSnr"), ("awgn-feedback", "General")])
def test_classify_verdicts(tmp_path, sid, verdict):
    cfg, out = write_config(tmp_path, system_id=sid)
    assert run_cli("classify", "--config", str(cfg)) == 0
    rep = json.loads((out / "class_report.json").read_text())
    assert rep["verdict"] == verdict and rep["system_id"] == sid


def test_probe_budget_zero_is_a_config_error(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, probe_budget=0)
    assert run_cli("classify", "--config", str(cfg)) == 2
    assert "probe_budget" in capsys.readouterr().err


def test_plotdata_without_results_exits_5(tmp_path):
    cfg, _ = write_config(tmp_path)
    assert run_cli("plotdata", "--config", str(cfg)) == 5


def test_plotdata_with_empty_r_grid_fails_at_parse(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, r_grid=[])
    assert run_cli("plotdata", "--config", str(cfg)) == 2
    assert "r_grid" in capsys.readouterr().err


def _read_blocks(path):
    blocks, current = {}, None
    for line in path.read_text().splitlines():
        if line.startswith("# ") and "=" in line:
            current = blocks.setdefault(line[2:], [])
        elif line and not line.startswith("#"):
            current.append(line.split())
    return blocks


def test_plotdata_series_match_csv_tokens(tmp_path):
    cfg, out = write_config(tmp_path)
    assert run_cli("run", "--config", str(cfg)) == 0
    assert run_cli("plotdata", "--config", str(cfg), "--no-figures") == 0
    assert not list(out.glob("*.png"))
    _, rows = report.read_csv(out / "info_curve.csv")
    final = [row for row in rows if row[1] == rows[-1][1]]
    blocks = _read_blocks(out / "i_vs_r.dat")
    assert set(blocks) == {"estimator = duncan", "estimator = direct", "estimator = gsv"}
    for est, block in blocks.items():
        expected = [[r, v, se] for r, t, e, v, se in final if e == est.split(" = ")[1]]
        assert block == expected
    _, srows = report.read_csv(out / "mmse_surface.csv")
    cm = _read_blocks(out / "cmmse_vs_t.dat")
    assert cm["r = 1.0"] == [[t, c] for t, s, r, c, *_ in srows if r == "1.0" and t == s]


def test_plotdata_renders_figures(tmp_path):
    cfg, out = write_config(tmp_path)
    assert run_cli("verify", "--config", str(cfg)) in (0, 1)
    assert run_cli("plotdata", "--config", str(cfg)) == 0
    for name in ("cmmse_vs_t", "i_vs_r", "ii_vs_t", "residuals_vs_r"):
        assert (out / f"{name}.dat").exists()
        assert (out / f"{name}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


@pytest.mark.parametrize("patch,key", [
    ({"bogus": 1}, "bogus"),
    ({"system_id": "nope"}, "system_id"),
    ({"r_grid": []}, "r_grid"),
    ({"r_grid": [1.0, 0.5]}, "r_grid"),
    ({"r_grid": [-1.0]}, "r_grid"),
    ({"replicates": 1}, "replicates"),
    ({"replicates": 2.5}, "replicates"),
    ({"grid": {"T": 0, "N": 10}}, "grid.T"),
    ({"grid": {"T": 1, "N": 0}}, "grid.N"),
    ({"master_seed": -1}, "master_seed"),
    ({"common_noise": "yes"}, "common_noise"),
    ({"tolerances": {"absolute": -1}}, "tolerances.absolute"),
    ({"probe_budget": 0}, "probe_budget"),
    ({"workers": 0}, "workers"),
    ({"estimator": "fancy"}, "estimator"),
    ({"overrides": {"zeta": 1}}, "overrides.zeta"),
    ({"overrides": {"sigma2": -1.0}}, "overrides.sigma2"),
])
def test_config_errors_name_the_key(patch, key):
    data = {"system_id": "awgn-gauss", **SMALL, **patch}
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.key == key
    assert key in str(info.value)


def test_config_defaults_and_round_trip():
    cfg = parse_config({"system_id": "awgn-bpsk"})
    assert isinstance(cfg, ExperimentConfig)
    assert cfg.r_grid == [0.5, 1.0, 1.5] and cfg.estimator == "conditional"
    assert parse_config(cfg.to_dict()) == cfg


def test_unreadable_and_malformed_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    assert main(["run", "--config", str(bad), "--quiet"]) == 2


def test_unsupported_input_exits_3(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, system_id="awgn-feedback", overrides={"input": {"kind": "gauss"}})
    assert run_cli("run", "--config", str(cfg)) == 3
    assert "unsupported" in capsys.readouterr().err


def test_all_replicates_aborted_exits_4(tmp_path, capsys):
    cfg, _ = write_config(tmp_path, system_id="awgn-feedback", overrides={"beta": -1e5}, r_grid=[4.0],
                          grid={"T": 1.0, "N": 100}, replicates=10)
    assert run_cli("run", "--config", str(cfg)) == 4
    assert "no usable replicates" in capsys.readouterr().err


def test_command_line_overrides(tmp_path):
    cfg, _ = write_config(tmp_path)
    other = tmp_path / "elsewhere"
    assert run_cli("run", "--config", str(cfg), "--out", str(other), "--seed", "9", "--replicates", "50") == 0
    manifest = json.loads((other / "manifest.json").read_text())
    assert manifest["config"]["master_seed"] == 9 and manifest["config"]["replicates"] == 50
    assert run_cli("run", "--config", str(cfg), "--replicates", "1") == 2


def test_module_entry_point(tmp_path):
    cfg, out = write_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "immselab", "classify", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "StrongSnr" in proc.stdout


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.outputs == f"results/{cfg.system_id}"
