import json
import shutil

import numpy as np
import pytest

from hamflex.cli import main
from hamflex.field_core import GridSpec, GridField, write_gf1, write_tf1
from hamflex.pipeline import (CERTIFICATES, EXIT_BOUND, EXIT_IO, EXIT_OK, EXIT_PRECONDITION,
                              PipelineConfig, StageError, TamperDetected, run_pipeline, verify_bundle)

from conftest import oscillating_field

U_BOX = '{"type": "box", "x": [0.5, 3.5], "y": [-1.5, 1.5]}'
OMEGA_BOX = '{"type": "box", "x": [-3.5, 3.5], "y": [-2.0, 2.0]}'
H_BOX = '{"type": "box", "x": [-4.0, 4.0], "y": [2.5, 4.0]}'


@pytest.fixture(scope="module")
def window_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("window")
    code, rep = run_pipeline(PipelineConfig(f="window", report_dir=str(out)))
    return out, code, rep


def test_zero_field_empty_ledger(tmp_path):
    code, rep = run_pipeline(PipelineConfig(f="zero", report_dir=str(tmp_path)))
    assert code == EXIT_OK and rep["achieved"] == 0
    assert rep["budget"] == 14                      # ceil(2/L) N with L = 1, N = 7
    assert all(r["ok"] for r in verify_bundle(tmp_path).values())


def test_window_field_reconstructs(window_bundle):
    out, code, rep = window_bundle
    assert code == EXIT_OK and rep["oracle_status"] == "solved"
    assert rep["residual"] <= 1e-3
    assert all(rep["stages"].values())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_field_families_within_N_L(tmp_path, seed):
    code, rep = run_pipeline(PipelineConfig(f="random", seed=seed, report_dir=str(tmp_path)))
    assert code == EXIT_OK and all(rep["stages"].values())
    sched = json.loads((tmp_path / "schedule.json").read_text())
    assert sched["classes"]
    for c in sched["classes"]:
        assert c["n_families"] <= sched["N_L"]
    assert all(r["ok"] for r in verify_bundle(tmp_path).values())


def test_clean_bundle_verifies(window_bundle):
    out, _, _ = window_bundle
    res = verify_bundle(out, strict=True)
    assert sorted(res) == sorted(CERTIFICATES) and all(r["ok"] for r in res.values())


FAULTS = [("budget", "budget", lambda v: v - 10 ** 6), ("budget", "achieved", lambda v: v + 1),
          ("approx", "eps_achieved_l1", lambda v: v / 2), ("approx", "leakage_bound", lambda v: v * 1e-3),
          ("split", "budget", lambda v: v / 2), ("cover", "n_colors", lambda v: v + 101),
          ("cubes", "uncovered_cells", lambda v: v + 3), ("schedule", "N_L", lambda v: 0),
          ("oracle", "residual", lambda v: v / 10)]


@pytest.mark.parametrize("name,key,edit", FAULTS)
def test_single_fault_fails_only_its_certificate(window_bundle, tmp_path, name, key, edit):
    src, _, _ = window_bundle
    dst = tmp_path / "bundle"
    shutil.copytree(src, dst)
    path = dst / f"{name}.json"
    d = json.loads(path.read_text())
    d[key] = edit(d[key])
    path.write_text(json.dumps(d))
    res = verify_bundle(dst)
    assert [n for n, r in res.items() if not r["ok"]] == [name]
    with pytest.raises(TamperDetected):
        verify_bundle(dst, strict=True)
    assert main(["verify", "--bundle", str(dst)]) == EXIT_BOUND


def test_double_resolution_still_passes(tmp_path):
    grid = {"x_min": -4.0, "x_max": 4.0, "y_min": -4.0, "y_max": 4.0, "nx": 128, "ny": 128}
    code, rep = run_pipeline(PipelineConfig(f="window", grid=grid, report_dir=str(tmp_path)))
    assert code == EXIT_OK and rep["residual"] <= 1e-3
    assert all(r["ok"] for r in verify_bundle(tmp_path).values())


def test_deterministic_reports(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        run_pipeline(PipelineConfig(f="random", seed=4, report_dir=str(d)))
    names = sorted(p.name for p in a.glob("*.json")) + ["plot.csv", "f.gf1", "K.gf1"]
    assert "report.json" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_exit_codes(tmp_path):
    with pytest.raises(StageError) as e:
        run_pipeline(PipelineConfig(f=str(tmp_path / "missing.gf1"), report_dir=str(tmp_path / "o")))
    assert e.value.code == EXIT_IO
    assert main(["pipeline", "--f", str(tmp_path / "missing.gf1"), "--out", str(tmp_path / "o")]) == EXIT_IO
    assert main(["verify", "--bundle", str(tmp_path / "nothing")]) == EXIT_IO
    assert main(["classify", "--alpha", "0", "--betas", ""]) == EXIT_PRECONDITION
    bad = PipelineConfig(f="window", L=-1.0, report_dir=str(tmp_path / "o"))
    with pytest.raises(StageError) as e:
        run_pipeline(bad)
    assert e.value.code == EXIT_PRECONDITION


def test_cli_pipeline_and_verify(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["pipeline", "--f", "window", "--out", str(out)]) == EXIT_OK
    stages = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert all(stages.values())
    assert main(["verify", "--bundle", str(out), "--report", str(tmp_path / "v.json")]) == EXIT_OK
    assert json.loads((tmp_path / "v.json").read_text())["ok"]


def test_subcommand_chain(window_bundle, tmp_path):
    src, _, _ = window_bundle
    f = str(src / "f.gf1")
    r = lambda n: str(tmp_path / f"{n}.json")
    assert main(["split", "--f", f, "--h-region", H_BOX, "--report", r("split")]) == EXIT_OK
    assert main(["cover", "--f", f, "--u", U_BOX, "--omega", OMEGA_BOX, "--eps", "0.6",
                 "--report", r("cover")]) == EXIT_OK
    assert main(["cubes", "--f", f, "--cover", r("cover"), "--delta", "0.5", "--report", r("cubes")]) == EXIT_OK
    assert main(["schedule", "--f", f, "--cover", r("cover"), "--cubes", r("cubes"), "--L", "1",
                 "--target", "2,0", "--report", r("schedule")]) == EXIT_OK
    assert main(["approx", "--H", f, "--delta", "0.5", "--report", r("approx")]) == EXIT_OK
    assert main(["approx", "--H", f, "--delta", "0.5", "--eps", "1e-6", "--report", r("tight")]) == EXIT_BOUND
    assert main(["flow", "--H", f, "--out", str(tmp_path / "f.fm1"), "--report", r("flow")]) == EXIT_OK
    for n in ("split", "cover", "cubes", "schedule", "approx", "flow"):
        d = json.loads((tmp_path / f"{n}.json").read_text())
        assert d["ok"] and d["schema_version"] == 1


def test_classify_and_cal(tmp_path, capsys):
    assert main(["classify", "--alpha", "1", "--betas", "1:1", "--kmax", "50"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["regime"] == "Hofer_plus_Cal" and abs(rep["b_estimate"]["b_extrapolated"] - 1) <= 0.02
    s = GridSpec(-1, 1, -1, 1, 32, 32)
    write_gf1(GridField(s, np.full(s.shape, 0.5)), tmp_path / "h.gf1")
    assert main(["cal", "--H", str(tmp_path / "h.gf1")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["calabi"] == pytest.approx(2.0)


def test_discretize_command(tmp_path):
    s = GridSpec(-2, 2, -2, 2, 48, 48)
    G = oscillating_field(s, 2 * 64 + 1, np.random.default_rng(2))
    write_tf1(G, tmp_path / "g.tf1")
    assert main(["discretize", "--G", str(tmp_path / "g.tf1"), "--N", "2", "--no-K",
                 "--report", str(tmp_path / "d.json")]) == EXIT_OK
    assert json.loads((tmp_path / "d.json").read_text())["ok"]
