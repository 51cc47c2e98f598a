"""Problem construction from config dicts, and dataset run-directory I/O.

A problem config describes either a Gaussian-linear model (the oracle-checked
path) or a CT simulation pipeline (phantoms -> radon -> dose noise -> FBP).
Configs are plain JSON-able dicts so they round-trip through manifests.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import HU_PER_UNIT
from . import persistence as ps
from .forward_models import Geometry, LinearOperator, NoiseModel, make_operator
from .oracle import GaussianLinearModel, make_gaussian_dataset
from .priors import Dataset, SupervisedPair, laplacian_eigenvalues, make_dataset, make_phantom


class ConfigError(ValueError):
    pass


def spectral_density_from_config(image_size: int, cfg: dict) -> np.ndarray:
    kind = cfg.get("kind", "inv_laplacian_power")
    if kind == "flat":
        return np.full((image_size, image_size), float(cfg["pointwise_std"]) ** 2)
    if kind == "inv_laplacian_power":
        dens = 1.0 / (laplacian_eigenvalues(image_size) + float(cfg.get("m2", 0.3))) ** float(
            cfg.get("power", 2.0)
        )
        return dens * (float(cfg["pointwise_std"]) ** 2 / dens.mean())
    raise ConfigError(f"unknown spectral density kind {kind!r}")


def prior_mean_from_config(image_size: int, cfg: dict | None) -> np.ndarray:
    if cfg is None or cfg.get("kind", "zeros") == "zeros":
        return np.zeros((image_size, image_size))
    if cfg["kind"] in ("organ", "blobs"):
        ph = make_phantom(cfg["kind"], image_size, seed=int(cfg.get("seed", 0)))
        return ph.image / HU_PER_UNIT
    raise ConfigError(f"unknown prior mean kind {cfg['kind']!r}")


def operator_from_config(image_size: int, cfg: dict | None) -> LinearOperator:
    cfg = dict(cfg or {"kind": "identity"})
    kind = cfg.pop("kind", "identity")
    cfg.setdefault("image_size", image_size)
    try:
        return make_operator(kind, cfg)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad operator config: {exc}") from exc


def gaussian_model_from_config(cfg: dict) -> GaussianLinearModel:
    try:
        n = int(cfg["image_size"])
        return GaussianLinearModel(
            operator=operator_from_config(n, cfg.get("operator")),
            prior_mean=prior_mean_from_config(n, cfg.get("prior_mean")),
            prior_spectral_density=spectral_density_from_config(n, cfg["prior_spectral"]),
            noise_variance=(float(cfg["noise_std_hu"]) / HU_PER_UNIT) ** 2,
        )
    except KeyError as exc:
        raise ConfigError(f"gaussian_linear problem config missing {exc}") from exc


def build_dataset(problem_cfg: dict, n: int, seed: int) -> Dataset:
    kind = problem_cfg.get("kind")
    if kind == "gaussian_linear":
        return make_gaussian_dataset(gaussian_model_from_config(problem_cfg), n, seed)
    if kind == "ct":
        try:
            size = int(problem_cfg["image_size"])
            geom_cfg = problem_cfg.get("geometry")
            if geom_cfg is not None:
                geom = Geometry(
                    n_angles=int(geom_cfg["n_angles"]),
                    n_detectors=int(geom_cfg["n_detectors"]),
                    image_size=size,
                    fov=float(geom_cfg.get("fov", 1.0)),
                )
                op = make_operator("radon", {"geometry": geom})
            else:
                op = operator_from_config(size, problem_cfg.get("operator"))
            noise_cfg = dict(problem_cfg.get("noise", {}))
            noise = NoiseModel(
                kind=noise_cfg.get("kind", "poisson_transmission"),
                photons_per_pixel=float(noise_cfg.get("photons_per_pixel", 1000.0)),
                sigma=float(noise_cfg.get("sigma", 0.0)),
            )
            return make_dataset(
                n,
                problem_cfg.get("phantom_kind", "organ"),
                op,
                noise,
                problem_cfg.get("fbp", {"cutoff": 0.4}),
                seed,
                lesion_contrast_hu=problem_cfg.get("lesion_contrast_hu"),
            )
        except KeyError as exc:
            raise ConfigError(f"ct problem config missing {exc}") from exc
    raise ConfigError(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# dataset run directories
# ---------------------------------------------------------------------------

def save_dataset_run(
    root: str | Path, run_id: str, dataset: Dataset, config: dict, seed: int
) -> Path:
    run_dir = ps.new_run_dir(root, run_id)
    xs = np.stack([p.x for p in dataset.pairs])
    ys = np.stack([p.y for p in dataset.pairs])
    ps.write_tensor(run_dir / ps.TENSORS_DIR / "x.bin", xs)
    ps.write_tensor(run_dir / ps.TENSORS_DIR / "y.bin", ys)
    manifest = ps.RunManifest(
        run_id=run_id,
        kind="dataset",
        config=config,
        seed=seed,
        dataset_fingerprint=dataset.fingerprint,
        artifact_paths={
            "x": f"{ps.TENSORS_DIR}/x.bin",
            "y": f"{ps.TENSORS_DIR}/y.bin",
        },
    )
    ps.write_manifest(run_dir, manifest)
    return run_dir


def load_dataset_run(run_dir: str | Path):
    run_dir = Path(run_dir)
    manifest = ps.read_manifest(run_dir)
    xs = ps.read_tensor(ps.artifact_path(run_dir, manifest, "x"))
    ys = ps.read_tensor(ps.artifact_path(run_dir, manifest, "y"))
    pairs = [SupervisedPair(x=x, y=y) for x, y in zip(xs, ys)]
    flat = (t for p in pairs for t in (p.x, p.y))
    dataset = Dataset(pairs=pairs, fingerprint=ps.fingerprint_tensors(flat))
    if dataset.fingerprint != manifest.dataset_fingerprint:
        raise ps.ManifestSchemaError(
            "dataset_fingerprint", "stored tensors do not match the recorded fingerprint"
        )
    return dataset, manifest
