import numpy as np
import pytest
from fastapi.testclient import TestClient

import binv.analysis as an
import binv.persistence as ps
from binv.cli import run_roi_test
from binv.service import build_app
from binv import HU_PER_UNIT


def make_wgan_like_run(root, run_id="w1", n=16, n_samples=60, seed=0):
    """A run directory with cached samples and direct estimates, no training."""
    rng = np.random.default_rng(seed)
    run = ps.new_run_dir(root, run_id)
    manifest = ps.RunManifest(
        run_id=run_id, kind="wgan", config={"note": "fixture"}, seed=seed,
        dataset_fingerprint="f" * 64,
        artifact_paths={},
    )
    ps.write_manifest(run, manifest)
    tag = run / ps.SAMPLES_DIR / "default"
    tag.mkdir(parents=True, exist_ok=True)
    base = 0.02 + 0.01 * rng.standard_normal((n, n))
    samples = base[None] + 0.005 * rng.standard_normal((n_samples, n, n))
    ps.write_tensor(tag / "samples.bin", samples.astype(np.float32))
    ps.write_tensor(tag / "condition.bin", base.astype(np.float32))
    ps.write_tensor(tag / "gt.bin", base.astype(np.float32))
    ps.write_tensor(tag / "mean_direct.bin", samples.mean(axis=0).astype(np.float32))
    ps.write_tensor(
        tag / "variance_direct.bin", samples.var(axis=0).astype(np.float32)
    )
    return run


def masks(n=16):
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    feat = (ii - 5) ** 2 + (jj - 5) ** 2 <= 4
    ref = (ii - 10) ** 2 + (jj - 10) ** 2 <= 4
    return feat, ref


@pytest.fixture()
def client(tmp_path):
    make_wgan_like_run(tmp_path)
    return TestClient(build_app(tmp_path)), tmp_path


def test_empty_root_lists_nothing(tmp_path):
    app = TestClient(build_app(tmp_path / "none"))
    assert app.get("/runs").json() == []


def test_list_runs_and_malformed_skipped(client):
    app, root = client
    bad = root / "broken"
    bad.mkdir()
    (bad / "manifest").write_text("{oops")
    runs = app.get("/runs").json()
    assert len(runs) == 1
    summary = runs[0]
    assert summary["run_id"] == "w1"
    assert summary["n_cached_samples"] == 60
    assert summary["image_size"] == 16
    assert set(summary["available_images"]) == {
        "gt", "fbp", "mean_sampling", "pstd_sampling", "mean_direct", "pstd_direct",
    }


def test_image_png_and_window(client):
    app, _ = client
    r = app.get("/runs/w1/image", params={"kind": "fbp"})
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    # constant image at the window floor maps to all-zero bytes
    from PIL import Image
    import io

    r2 = app.get("/runs/w1/image", params={"kind": "fbp", "window": "1000,2000"})
    img = np.array(Image.open(io.BytesIO(r2.content)))
    assert img.max() == 0


def test_image_raw_round_trip_bit_exact(client):
    app, root = client
    r = app.get("/runs/w1/image", params={"kind": "gt", "format": "raw"})
    assert r.status_code == 200
    served = ps.tensor_from_bytes(r.content)
    on_disk = ps.read_tensor(root / "w1" / "samples" / "default" / "gt.bin")
    assert np.array_equal(served.view(np.uint32), on_disk.view(np.uint32))


def test_image_errors(client):
    app, _ = client
    assert app.get("/runs/missing/image").status_code == 404
    assert app.get("/runs/w1/image", params={"kind": "bogus"}).status_code == 404
    assert app.get("/runs/w1/image", params={"window": "abc"}).status_code == 400
    assert app.get("/runs/w1/image", params={"window": "50,-50"}).status_code == 400
    assert app.get("/runs/w1/image", params={"format": "tiff"}).status_code == 400


def roi_request(feat, ref, tau=10.0, method="both"):
    return {
        "feature_mask": an.encode_mask_rle(feat),
        "reference_mask": an.encode_mask_rle(ref),
        "tau": tau,
        "method": method,
    }


def test_roi_test_matches_cli_exactly(client):
    app, root = client
    feat, ref = masks()
    http = app.post("/runs/w1/roi-test", json=roi_request(feat, ref)).json()
    cli = run_roi_test(root / "w1", "default", feat, ref, 10.0, "both", persist=False)
    for method in ("sampling", "direct"):
        assert abs(http["results"][method]["p_value"] - cli["results"][method]["p_value"]) <= 1e-12
    # sampling deltas returned for client-side tail recomputation
    deltas = np.array(http["results"]["sampling"]["delta_samples"])
    assert deltas.shape == (60,)
    p = http["results"]["sampling"]["p_value"]
    assert p == (deltas > 10.0).mean()


def test_roi_test_default_tau_is_10(client):
    app, _ = client
    feat, ref = masks()
    body = roi_request(feat, ref)
    del body["tau"]
    res = app.post("/runs/w1/roi-test", json=body).json()
    assert res["tau_hu"] == 10.0


def test_roi_test_validation_errors(client):
    app, _ = client
    feat, ref = masks()
    overlap = app.post("/runs/w1/roi-test", json=roi_request(feat, feat))
    assert overlap.status_code == 422
    missing = app.post("/runs/missing/roi-test", json=roi_request(feat, ref))
    assert missing.status_code == 404
    wrong_shape = masks(8)
    bad = app.post("/runs/w1/roi-test", json=roi_request(*wrong_shape))
    assert bad.status_code == 422


def test_roi_test_method_unavailable_409(tmp_path):
    run = make_wgan_like_run(tmp_path, run_id="nodirct", seed=1)
    for name in ("mean_direct.bin", "variance_direct.bin"):
        (run / ps.SAMPLES_DIR / "default" / name).unlink()
    app = TestClient(build_app(tmp_path))
    feat, ref = masks()
    res = app.post("/runs/nodirct/roi-test", json=roi_request(feat, ref, method="direct"))
    assert res.status_code == 409


def test_service_read_only_and_repeatable(client):
    app, root = client
    feat, ref = masks()
    before = sorted(p.name for p in (root / "w1").rglob("*"))
    r1 = app.post("/runs/w1/roi-test", json=roi_request(feat, ref)).json()
    r2 = app.post("/runs/w1/roi-test", json=roi_request(feat, ref)).json()
    after = sorted(p.name for p in (root / "w1").rglob("*"))
    assert before == after  # no mutation of the run directory
    assert r1 == r2


def test_direct_normal_params_consistent(client):
    app, root = client
    feat, ref = masks()
    res = app.post("/runs/w1/roi-test", json=roi_request(feat, ref, method="direct")).json()
    direct = res["results"]["direct"]
    var = ps.read_tensor(root / "w1" / "samples" / "default" / "variance_direct.bin")
    sigma = an.direct_sigma_delta(var.astype(np.float64) * HU_PER_UNIT**2, feat, ref)
    assert direct["sigma_delta"] == pytest.approx(sigma, rel=1e-9)
