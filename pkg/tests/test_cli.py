import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import binv.analysis as an
import binv.persistence as ps
from binv.cli import main


def invoke(runs_root, *args, expect=0):
    runner = CliRunner()
    result = runner.invoke(main, ["--runs", str(runs_root), *args])
    if result.exit_code != expect:  # pragma: no cover - debugging aid
        raise AssertionError(
            f"exit {result.exit_code} != {expect}\noutput: {result.output}\n"
            f"exc: {result.exception}"
        )
    return result


@pytest.fixture()
def gauss_config(tmp_path):
    cfg = {
        "problem": {
            "kind": "gaussian_linear",
            "image_size": 16,
            "operator": {"kind": "identity"},
            "prior_spectral": {"kind": "inv_laplacian_power", "m2": 0.3, "power": 2.0,
                               "pointwise_std": 0.04},
            "prior_mean": {"kind": "organ", "seed": 2024},
            "noise_std_hu": 12.0,
        },
        "dataset": {"n": 12, "seed": 3},
        "networks": {
            "gen": {"base_channels": 8, "n_scales": 1, "fc_width": 16},
            "disc": {"base_channels": 8, "n_scales": 1, "fc_width": 16},
            "estimator": {"base_channels": 8, "n_scales": 1, "fc_width": 16},
        },
        "training": {"steps": 2, "batch_size": 4, "seed": 1},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def masks_files(tmp_path, n=16):
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    feat = (ii - 5) ** 2 + (jj - 5) ** 2 <= 4
    ref = (ii - 10) ** 2 + (jj - 10) ** 2 <= 4
    f_path = tmp_path / "feat.json"
    r_path = tmp_path / "ref.json"
    f_path.write_text(json.dumps(an.encode_mask_rle(feat)))
    r_path.write_text(json.dumps(an.encode_mask_rle(ref)))
    return f_path, r_path


def test_gen_data_deterministic_fingerprint(tmp_path, gauss_config):
    root = tmp_path / "runs"
    out1 = json.loads(invoke(root, "gen-data", "--config", str(gauss_config),
                             "--out", "d1").output)
    out2 = json.loads(invoke(root, "gen-data", "--config", str(gauss_config),
                             "--out", "d2").output)
    assert out1["fingerprint"] == out2["fingerprint"]
    out3 = json.loads(invoke(root, "gen-data", "--config", str(gauss_config),
                             "--seed", "99", "--out", "d3").output)
    assert out3["fingerprint"] != out1["fingerprint"]


def test_full_pipeline_and_roi_test(tmp_path, gauss_config):
    root = tmp_path / "runs"
    invoke(root, "gen-data", "--config", str(gauss_config), "--out", "data")
    invoke(root, "train-wgan", "--config", str(gauss_config), "--dataset", "data",
           "--out", "w")
    invoke(root, "sample", "--run", "w", "--y-dataset", "data", "--y-index", "0",
           "--n", "40", "--seed", "4")
    invoke(root, "train-direct", "--config", str(gauss_config), "--dataset", "data",
           "--stage", "mean", "--out", "dm")
    invoke(root, "train-direct", "--config", str(gauss_config), "--dataset", "data",
           "--stage", "variance", "--mean-run", "dm", "--out", "dv")
    invoke(root, "estimate", "--mean-run", "dm", "--var-run", "dv",
           "--y-dataset", "data", "--y-index", "0", "--into", "w")

    feat, ref = masks_files(tmp_path)
    res = json.loads(invoke(root, "roi-test", "--run", "w", "--feature", str(feat),
                            "--reference", str(ref), "--method", "both").output)
    assert res["tau_hu"] == 10.0  # default threshold
    assert "sampling" in res["results"] and "direct" in res["results"]
    assert res["results"]["sampling"]["n_samples"] == 40
    assert 0.0 <= res["results"]["sampling"]["p_value"] <= 1.0
    assert 0.0 <= res["results"]["direct"]["p_value"] <= 1.0
    # result persisted with the run
    saved = list((root / "w" / "samples" / "default" / "roi_tests").glob("*.json"))
    assert len(saved) == 1

    report = json.loads(invoke(root, "report", "--run", "w").output)
    out = Path(report["report_dir"])
    assert (out / "mean_sampling.png").is_file()
    assert (out / "pstd_sampling.png").is_file()
    assert (out / "mean_direct.png").is_file()
    assert (out / "summary.csv").is_file()
    assert any(out.glob("delta_*.png"))


def test_prior_sample_command(tmp_path):
    cfg = {"prior": {"kind": "l2", "weight": 2.0}, "image_size": 8,
           "mala": {"n_steps": 400, "step_size": 0.2, "burn_in": 100}, "n_samples": 3}
    path = tmp_path / "prior.json"
    path.write_text(json.dumps(cfg))
    root = tmp_path / "runs"
    out = json.loads(invoke(root, "prior-sample", "--config", str(path),
                            "--out", "p1", "--seed", "5").output)
    assert 0.0 < out["acceptance_rate"] <= 1.0
    samples = ps.read_tensor(root / "p1" / "tensors" / "samples.bin")
    assert samples.shape[0] == 3 and samples.shape[1:] == (8, 8)


def test_exit_codes(tmp_path, gauss_config):
    root = tmp_path / "runs"
    # 2: bad config
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    invoke(root, "gen-data", "--config", str(bad), expect=2)
    # 2: structurally wrong config
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    invoke(root, "gen-data", "--config", str(empty), expect=2)
    # 3: missing dependency run
    invoke(root, "train-wgan", "--config", str(gauss_config), "--dataset", "nope",
           expect=3)
    invoke(root, "sample", "--run", "nope", "--y-file", "x.bin", expect=3)
    # 2: variance stage without --mean-run
    invoke(root, "gen-data", "--config", str(gauss_config), "--out", "data")
    invoke(root, "train-direct", "--config", str(gauss_config), "--dataset", "data",
           "--stage", "variance", expect=2)


def test_seed_determines_everything(tmp_path, gauss_config):
    root = tmp_path / "runs"
    invoke(root, "gen-data", "--config", str(gauss_config), "--out", "data")
    invoke(root, "train-wgan", "--config", str(gauss_config), "--dataset", "data",
           "--out", "w1", "--seed", "42")
    invoke(root, "train-wgan", "--config", str(gauss_config), "--dataset", "data",
           "--out", "w2", "--seed", "42")
    import binv.train_common as tc

    c1 = tc.load_loss_curves(root / "w1")
    c2 = tc.load_loss_curves(root / "w2")
    assert np.array_equal(c1["disc_loss"], c2["disc_loss"])
    s1 = json.loads(invoke(root, "sample", "--run", "w1", "--y-dataset", "data",
                           "--y-index", "1", "--n", "8", "--seed", "9",
                           "--tag", "a").output)
    s2 = json.loads(invoke(root, "sample", "--run", "w1", "--y-dataset", "data",
                           "--y-index", "1", "--n", "8", "--seed", "9",
                           "--tag", "b").output)
    a = ps.read_tensor(root / "w1" / "samples" / "a" / "samples.bin")
    b = ps.read_tensor(root / "w1" / "samples" / "b" / "samples.bin")
    assert np.array_equal(a, b)
    assert s1["pstd_mean_hu"] == s2["pstd_mean_hu"]
