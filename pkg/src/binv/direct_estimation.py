"""Direct neural estimation of the posterior mean and pointwise variance.

Two-stage training: a mean network minimizes the mean squared error against
ground truth, then a variance network is regressed (with the mean network
frozen) onto the squared residual (x - mean(y))^2 pixel-wise.  The variance
run refuses to train against a dataset whose fingerprint differs from the
mean run's, since its target depends on that exact network.

Both use the same optimizer settings as the adversarial trainer.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import torch

from . import HU_PER_UNIT
from . import persistence as ps
from .networks import NetConfig, build_estimator
from .priors import Dataset
from .train_common import (
    NumericalFailure,
    Standardization,
    draw_batch,
    load_loss_curves,
    load_module,
    load_optimizer,
    load_progress,
    load_rng,
    make_adam,
    noisy_linear_cosine_lr,
    save_loss_curves,
    save_module,
    save_optimizer,
    save_progress,
    save_rng,
    set_lr,
    weight_norm_sq,
)
from .wgan_training import TrainConfig

# squared-residual targets are clipped here (in HU^2) to keep outlier pixels
# from destabilizing the squared-loss-of-squares
VARIANCE_TARGET_CLIP_HU2 = 1e6


def _train_estimator(
    dataset: Dataset,
    net_cfg: NetConfig,
    cfg: TrainConfig,
    runs_root: str | Path,
    run_id: str,
    kind: str,
    target_fn,
    extra_config: dict,
    resume: bool = False,
) -> Path:
    torch.use_deterministic_algorithms(True)
    runs_root = Path(runs_root)
    run_dir = runs_root / run_id
    net = build_estimator(net_cfg, nonneg_output=(kind == "direct_var"), seed=cfg.seed)
    opt = make_adam(net.parameters(), cfg.lr0, cfg.adam_beta1, cfg.adam_beta2)
    latest = run_dir / ps.CHECKPOINT_DIR / "latest"

    if resume:
        manifest = ps.read_manifest(run_dir)
        std = Standardization.from_dict(manifest.config["standardization"])
        load_module(latest, "estimator", net.module)
        load_optimizer(latest, "opt_estimator", opt)
        rng = load_rng(latest)
        start = load_progress(latest)["cycles_done"]
        curves = {k: list(v) for k, v in load_loss_curves(run_dir).items()}
    else:
        run_dir = ps.new_run_dir(runs_root, run_id)
        std = (
            Standardization.from_dataset(dataset)
            if cfg.standardize
            else Standardization(0.0, 1.0)
        )
        manifest = ps.RunManifest(
            run_id=run_id,
            kind=kind,
            config={
                "net": net_cfg.to_dict(),
                "train": cfg.to_dict(),
                "standardization": std.to_dict(),
                **extra_config,
            },
            seed=cfg.seed,
            dataset_fingerprint=dataset.fingerprint,
            artifact_paths={
                "checkpoint_final": f"{ps.CHECKPOINT_DIR}/final",
                "checkpoint_latest": f"{ps.CHECKPOINT_DIR}/latest",
                "loss_curves": f"{ps.TENSORS_DIR}/loss_curves.bin",
            },
        )
        ps.write_manifest(run_dir, manifest)
        torch.manual_seed(cfg.seed)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 23]))
        start = 0
        curves = {"loss": [], "lr": []}

    def snapshot(target: Path):
        target.mkdir(parents=True, exist_ok=True)
        save_module(target, "estimator", net.module)
        save_optimizer(target, "opt_estimator", opt)
        save_rng(target, rng)
        save_progress(target, {"cycles_done": cycle + 1})
        save_loss_curves(run_dir, curves)

    import copy

    last_good = None
    cycle = start - 1
    try:
        for cycle in range(start, cfg.steps):
            lr = noisy_linear_cosine_lr(
                cfg.lr0, cycle, cfg.steps, rng,
                num_periods=cfg.lr_num_periods,
                initial_variance=cfg.lr_initial_variance,
                variance_decay=cfg.lr_variance_decay,
                alpha=cfg.lr_alpha,
                beta=cfg.lr_beta,
            )
            set_lr(opt, lr)
            x, y = draw_batch(dataset, cfg.batch_size, rng, std, cfg.augment)
            target = target_fn(x, y, std)
            opt.zero_grad()
            pred = net(y)
            loss = (pred - target).square().mean() + cfg.weight_decay * weight_norm_sq(
                net.module
            )
            if not torch.isfinite(loss):
                raise NumericalFailure(f"loss non-finite at cycle {cycle}")
            loss.backward()
            opt.step()
            curves["loss"].append(loss.item())
            curves["lr"].append(lr)
            last_good = copy.deepcopy(net.module.state_dict())
            if cfg.checkpoint_every and (cycle + 1) % cfg.checkpoint_every == 0:
                snapshot(latest)
    except NumericalFailure:
        if last_good is not None:
            net.module.load_state_dict(last_good)
            snapshot(run_dir / ps.CHECKPOINT_DIR / "last_good")
        raise

    snapshot(latest)
    snapshot(run_dir / ps.CHECKPOINT_DIR / "final")
    return run_dir


def train_mean(
    dataset: Dataset,
    net_cfg: NetConfig,
    cfg: TrainConfig,
    runs_root: str | Path,
    run_id: str | None = None,
    resume: bool = False,
) -> Path:
    """Mean-squared-error regression of x on y."""
    if not dataset.pairs:
        raise ValueError("dataset is empty")
    if run_id is None:
        run_id = f"direct-mean_{dataset.fingerprint[:8]}_s{cfg.seed}"
    return _train_estimator(
        dataset, net_cfg, cfg, runs_root, run_id, "direct_mean",
        target_fn=lambda x, y, std: x,
        extra_config={},
        resume=resume,
    )


def train_variance(
    dataset: Dataset,
    mean_run: str | Path,
    net_cfg: NetConfig,
    cfg: TrainConfig,
    runs_root: str | Path,
    run_id: str | None = None,
    resume: bool = False,
) -> Path:
    """Regression of (x - mean(y))^2 on y against the frozen mean network."""
    if not dataset.pairs:
        raise ValueError("dataset is empty")
    mean_run = Path(mean_run)
    mean_manifest = ps.read_manifest(mean_run)
    if mean_manifest.kind != "direct_mean":
        raise ValueError(f"{mean_run} is not a direct_mean run")
    if mean_manifest.dataset_fingerprint != dataset.fingerprint:
        raise ValueError(
            "dataset fingerprint mismatch: the variance target depends on the mean "
            f"network's training data ({mean_manifest.dataset_fingerprint[:12]} != "
            f"{dataset.fingerprint[:12]})"
        )
    mean_net, mean_std = load_estimator(mean_run)

    def target_fn(x, y_std, std):
        # y arrives standardized with the *variance* run's affine; move it to
        # the mean run's frame before the frozen forward pass
        y_raw = std.decode(y_std.numpy())
        y_mean_frame = torch.from_numpy(mean_std.encode(y_raw)).float()
        with torch.no_grad():
            pred_std = mean_net(y_mean_frame)
        pred_raw = mean_std.decode(pred_std.numpy())
        x_raw = std.decode(x.numpy())
        resid_sq = (x_raw - pred_raw) ** 2
        clip = VARIANCE_TARGET_CLIP_HU2 / HU_PER_UNIT**2
        resid_sq = np.minimum(resid_sq, clip)
        # variance net learns the squared residual in units of std^2
        return torch.from_numpy(resid_sq / std.std**2).float()

    if run_id is None:
        run_id = f"direct-var_{dataset.fingerprint[:8]}_s{cfg.seed}"
    return _train_estimator(
        dataset, net_cfg, cfg, runs_root, run_id, "direct_var",
        target_fn=target_fn,
        extra_config={
            "mean_run": {
                "run_id": mean_manifest.run_id,
                "dataset_fingerprint": mean_manifest.dataset_fingerprint,
            }
        },
        resume=resume,
    )


def load_estimator(run_dir: str | Path, checkpoint: str = "final"):
    run_dir = Path(run_dir)
    manifest = ps.read_manifest(run_dir)
    net_cfg = NetConfig.from_dict(manifest.config["net"])
    net = build_estimator(net_cfg, nonneg_output=(manifest.kind == "direct_var"), seed=0)
    load_module(run_dir / ps.CHECKPOINT_DIR / checkpoint, "estimator", net.module)
    net.module.eval()
    std = Standardization.from_dict(manifest.config["standardization"])
    return net, std


def _predict(run_dir: str | Path, y: np.ndarray, variance: bool) -> np.ndarray:
    run_dir = Path(run_dir)
    net, std = load_estimator(run_dir)
    size = net.config.image_size
    y = np.asarray(y, dtype=np.float32)
    if y.shape != (size, size):
        raise ValueError(f"conditioning image must be {size}x{size}, got {y.shape}")
    y_t = torch.from_numpy(std.encode(y)).float().reshape(1, 1, size, size)
    t0 = time.perf_counter()
    with torch.no_grad():
        out = net(y_t).squeeze().numpy()
    ms = (time.perf_counter() - t0) * 1e3
    with open(run_dir / "log.txt", "a") as f:
        f.write(f"predict {'variance' if variance else 'mean'}: {ms:.2f} ms/slice\n")
    if variance:
        return (out * std.std**2).astype(np.float32)
    return std.decode(out).astype(np.float32)


def predict_mean(run_dir: str | Path, y: np.ndarray) -> np.ndarray:
    """Single deterministic forward pass of the trained mean network."""
    return _predict(run_dir, y, variance=False)


def predict_variance(run_dir: str | Path, y: np.ndarray) -> np.ndarray:
    """Single deterministic forward pass of the trained variance network."""
    return _predict(run_dir, y, variance=True)
