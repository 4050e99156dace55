import json
import time

import numpy as np
import pytest

from seqgp import io
from seqgp.cli import farthest_point_order, main

SMALL_CAMPAIGN = """
[grid]
shape = [4, 4, 3]
peak = 100.0
[prior]
lambda0 = 250.0
[campaign]
n_steps = 4
radius = 150.0
n_volume_samples = 20
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_fourier_demo_small(tmp_path):
    cfg = _write(tmp_path, "[grid]\nM = 12\n[design]\nn_obs = [2, 4, 8]\n")
    assert main(["fourier-demo", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    run = tmp_path / "run"
    man = json.loads((run / "manifest.json").read_text())
    assert man["command"] == "fourier-demo" and man["status"] == "complete"
    assert (run / "summary.csv").exists() and (run / "truth.csv").exists()
    fields = sorted(p.name for p in run.glob("*_n*.csv"))
    assert len(fields) == 2 * 3 * 2 and "std_pointwise_n8.csv" in fields


def test_fourier_plan_only(tmp_path):
    cfg = _write(tmp_path, "[grid]\nM = 400\n")
    assert main(["fourier-demo", "--config", str(cfg), "--out", str(tmp_path / "p"), "--plan-only"]) == 0
    plan = json.loads((tmp_path / "p" / "plan.json").read_text())
    assert plan["explicit_bytes_f32"] == 4 * 160_000**2


def test_campaign_outputs(tmp_path):
    cfg = _write(tmp_path, SMALL_CAMPAIGN)
    out = tmp_path / "c"
    assert main(["grav-campaign", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    traj = io.read_csv(out / "trajectory.csv")
    assert len(traj) == 5 and traj[0]["site"] == "-1"
    for name in ("end_state.csv", "limiting.csv", "volumes.csv", "volume_quantiles.csv", "sites.csv"):
        assert (out / name).exists()
    lim = np.array([float(r["variance"]) for r in io.read_csv(out / "limiting.csv")])
    end = np.array([float(r["variance"]) for r in io.read_csv(out / "end_state.csv")])
    assert np.all(lim <= end + 1e-8)


def test_campaign_resume_identical(tmp_path):
    cfg = _write(tmp_path, SMALL_CAMPAIGN)
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["grav-campaign", "--config", str(cfg), "--out", str(full), "--seed", "1"]) == 0
    assert main(["grav-campaign", "--config", str(cfg), "--out", str(part), "--seed", "1", "--stop-after", "2"]) == 0
    assert json.loads((part / "manifest.json").read_text())["status"] == "interrupted"
    assert main(["grav-campaign", "--out", str(part), "--resume"]) == 0
    assert (full / "trajectory.csv").read_text() == (part / "trajectory.csv").read_text()
    assert (full / "end_state.csv").read_text() == (part / "end_state.csv").read_text()


def test_resume_without_run_is_config_error(tmp_path):
    assert main(["grav-campaign", "--out", str(tmp_path / "none"), "--resume"]) == 2


def test_fit_single_lambda(tmp_path, capsys):
    cfg = _write(tmp_path, "[grid]\nshape = [6, 6]\n[data]\nn_obs = 20\n[fit]\nlambda_grid = [3.0]\n")
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "f")]) == 0
    best = json.loads((tmp_path / "f" / "best.json").read_text())
    assert best["lambda0"] == 3.0 and best["sigma0"] > 0
    assert len(io.read_csv(tmp_path / "f" / "fit.csv")) == 1
    assert "nmll" in capsys.readouterr().out


def test_sample_with_data(tmp_path):
    cfg = _write(tmp_path, "[grid]\nshape = [5, 5]\n[sample]\nn = 12\nthreshold = 0.5\n[data]\nindices = [0, 12]\n")
    out = tmp_path / "s"
    assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 0
    ens = io.read_matrix(out / "ensemble.bin")
    truth = np.array([float(r["value"]) for r in io.read_csv(out / "truth.csv")])
    assert ens.shape == (25, 12)
    np.testing.assert_allclose(ens[[0, 12]], truth[[0, 12], None].repeat(12, axis=1), atol=1e-8)
    assert json.loads((out / "manifest.json").read_text())["provenance"] == "posterior(1)"


@pytest.mark.parametrize("text", ["[sample]\nn = 0\n", "[bogus]\nx = 1\n", "[prior]\nfamily = \"gauss\"\n",
                                  "[prior]\nsigma0 = -1\n"])
def test_config_errors_exit_2(tmp_path, text):
    cfg = _write(tmp_path, text)
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 2


def test_sample_empty_ensemble_message(tmp_path, capsys):
    cfg = _write(tmp_path, "[sample]\nn = 0\n")
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 2
    assert "ensemble size must be positive" in capsys.readouterr().err


@pytest.mark.slow
def test_default_campaign_under_a_minute(tmp_path):
    t0 = time.perf_counter()
    assert main(["grav-campaign", "--out", str(tmp_path / "d")]) == 0
    elapsed = time.perf_counter() - t0
    mv = [float(r["mean_variance"]) for r in io.read_csv(tmp_path / "d" / "trajectory.csv")]
    assert len(mv) == 31 and all(b <= a for a, b in zip(mv, mv[1:]))
    assert elapsed < 60


def test_memory_budget_exit_4(tmp_path):
    assert main(["sample", "--out", str(tmp_path / "m"), "--memory-budget", "1000"]) == 4


def test_farthest_point_order():
    pts = np.array([[0.0, 0], [1, 0], [10, 0], [5, 0]])
    order = farthest_point_order(pts, 4)
    assert sorted(order) == [0, 1, 2, 3] and order[:2] == [3, 0]  # centroid 4 is nearest 5; 0 and 10 tie, first wins
