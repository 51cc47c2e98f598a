"""Read-mostly HTTP API exposing completed runs to the ROI-explorer UI.

Endpoints:
  GET  /runs                         -> run summaries
  GET  /runs/{id}/image?kind=&window=lo,hi&format=png|raw&tag=
  POST /runs/{id}/roi-test           -> p-values, histogram, Normal params

Images are served windowed to 8-bit PNG or as raw BINV0001 tensors.  ROI
tests delegate to the same analysis code the CLI uses, so identical requests
give identical p; the service never writes into a run directory.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from . import persistence as ps
from .analysis import decode_mask_rle, sample_mean, sample_pstd, validate_rois
from .imaging import DEFAULT_WINDOW_HU, encode_png, window_image

IMAGE_KINDS = ("gt", "fbp", "mean_sampling", "pstd_sampling", "mean_direct", "pstd_direct")


class _TensorCache:
    """Tiny thread-safe LRU keyed by (path, mtime, size)."""

    def __init__(self, maxsize: int = 64):
        self.maxsize = maxsize
        self._lock = threading.Lock()
        self._store: OrderedDict = OrderedDict()

    def get(self, path: Path) -> np.ndarray:
        stat = path.stat()
        key = (str(path), stat.st_mtime_ns, stat.st_size)
        with self._lock:
            if key in self._store:
                self._store.move_to_end(key)
                return self._store[key]
        value = ps.read_tensor(path)
        with self._lock:
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self.maxsize:
                self._store.popitem(last=False)
        return value


class RoiMask(BaseModel):
    size: list[int]
    counts: list[int]


class RoiRequest(BaseModel):
    feature_mask: RoiMask
    reference_mask: RoiMask
    tau: float = Field(default=10.0, description="threshold in HU")
    method: str = Field(default="sampling", pattern="^(sampling|direct|both)$")
    tag: str = "default"


def build_app(runs_root: str | Path) -> FastAPI:
    runs_root = Path(runs_root)
    cache = _TensorCache()
    app = FastAPI(title="binv run service")
    # the browser UI is served from a different origin; the API is read-only
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def run_dir_or_404(run_id: str) -> Path:
        d = runs_root / run_id
        if not (d / ps.MANIFEST_NAME).is_file():
            raise HTTPException(status_code=404, detail=f"run {run_id!r} not found")
        return d

    def tag_dir(run_id: str, tag: str) -> Path:
        return run_dir_or_404(run_id) / ps.SAMPLES_DIR / tag

    def available_images(run_id: str, tag: str = "default") -> dict:
        d = tag_dir(run_id, tag)
        return {
            "gt": (d / "gt.bin").is_file(),
            "fbp": (d / "condition.bin").is_file(),
            "mean_sampling": (d / "samples.bin").is_file(),
            "pstd_sampling": (d / "samples.bin").is_file(),
            "mean_direct": (d / "mean_direct.bin").is_file(),
            "pstd_direct": (d / "variance_direct.bin").is_file(),
        }

    def load_image(run_id: str, kind: str, tag: str) -> np.ndarray:
        d = tag_dir(run_id, tag)
        if kind == "gt":
            path = d / "gt.bin"
        elif kind == "fbp":
            path = d / "condition.bin"
        elif kind in ("mean_sampling", "pstd_sampling"):
            path = d / "samples.bin"
        elif kind == "mean_direct":
            path = d / "mean_direct.bin"
        elif kind == "pstd_direct":
            path = d / "variance_direct.bin"
        else:
            raise HTTPException(status_code=404, detail=f"unknown image kind {kind!r}")
        if not path.is_file():
            raise HTTPException(
                status_code=404, detail=f"image kind {kind!r} not available for run {run_id!r}"
            )
        tensor = cache.get(path)
        if kind == "mean_sampling":
            return sample_mean(tensor)
        if kind == "pstd_sampling":
            return sample_pstd(tensor)
        if kind == "pstd_direct":
            return np.sqrt(np.clip(tensor, 0.0, None))
        return tensor

    @app.get("/runs")
    def list_runs():
        out = []
        for run_dir, manifest in ps.list_run_dirs(runs_root):
            tag = run_dir / ps.SAMPLES_DIR / "default"
            n_samples = 0
            image_size = None
            if (tag / "samples.bin").is_file():
                samples = cache.get(tag / "samples.bin")
                n_samples = int(samples.shape[0])
                image_size = int(samples.shape[1])
            elif (tag / "condition.bin").is_file():
                image_size = int(cache.get(tag / "condition.bin").shape[0])
            avail = available_images(manifest.run_id)
            out.append(
                {
                    "run_id": manifest.run_id,
                    "kind": manifest.kind,
                    "image_size": image_size,
                    "n_cached_samples": n_samples,
                    "available_images": [k for k, ok in avail.items() if ok],
                }
            )
        return out

    @app.get("/runs/{run_id}/image")
    def get_image(
        run_id: str,
        kind: str = "fbp",
        window: str = f"{DEFAULT_WINDOW_HU[0]:g},{DEFAULT_WINDOW_HU[1]:g}",
        format: str = "png",
        tag: str = "default",
    ):
        img = load_image(run_id, kind, tag)
        if format == "raw":
            return Response(
                content=ps.tensor_to_bytes(np.asarray(img, dtype=np.float32)),
                media_type="application/octet-stream",
            )
        if format != "png":
            raise HTTPException(status_code=400, detail=f"unknown format {format!r}")
        try:
            lo, hi = (float(v) for v in window.split(","))
            gray = window_image(img, lo, hi)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=f"bad window {window!r}: {exc}")
        return Response(content=encode_png(gray), media_type="image/png")

    @app.post("/runs/{run_id}/roi-test")
    def roi_test(run_id: str, request: RoiRequest):
        from .cli import MissingRunError, run_roi_test

        run_dir = run_dir_or_404(run_id)
        try:
            feature = decode_mask_rle(request.feature_mask.model_dump())
            reference = decode_mask_rle(request.reference_mask.model_dump())
            validate_rois(feature, reference)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        avail = available_images(run_id, request.tag)
        if request.method in ("sampling", "both") and not avail["mean_sampling"]:
            raise HTTPException(status_code=409, detail="no cached samples for this run")
        if request.method in ("direct", "both") and not avail["mean_direct"]:
            raise HTTPException(status_code=409, detail="no direct estimates for this run")
        d = tag_dir(run_id, request.tag)
        shape = None
        for name in ("samples.bin", "condition.bin", "mean_direct.bin"):
            if (d / name).is_file():
                t = cache.get(d / name)
                shape = tuple(t.shape[-2:])
                break
        if shape is not None and tuple(feature.shape) != shape:
            raise HTTPException(
                status_code=422,
                detail=f"mask shape {feature.shape} does not match image shape {shape}",
            )
        try:
            payload = run_roi_test(
                run_dir, request.tag, feature, reference, request.tau, request.method,
                persist=False,
            )
        except MissingRunError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return payload

    return app
