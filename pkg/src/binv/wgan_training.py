"""Conditional WGAN posterior sampling with a paired critic.

The critic scores unordered pairs of candidate images together with the
conditioning image.  Per training step it sees three pair types built from a
ground-truth image x and two generator draws g1 = G(z1, y), g2 = G(z2, y):

    core = mean[ 1/2 (D(x, g1, y) + D(g1, x, y)) - D(g1, g2, y) ]

(the symmetrized form; a variant with g2 in the first mixed pair is selectable
via ``core_loss_form`` since both appear in the derivation).  The critic is
kept approximately 1-Lipschitz in its pair argument by a gradient penalty
evaluated at the two interpolants

    a1 = eps (x, g1) + (1 - eps) (g1, g2)
    a2 = eps (g1, x) + (1 - eps) (g1, g2)

with Gamma = 1/2 (grad_pair D(a1) + grad_pair D(a2)) and penalty
mean[(||Gamma|| - 1)^2], the norm taken over the concatenated pair gradient.
A small drift penalty mean[D(x, x, y)^2] pins the critic's additive constant
(the critic takes pairs, so the ground-truth image is duplicated; selectable
via ``drift_input``).

Final losses:  critic  -core + 10 * grad_pen + 1e-3 * drift + 1e-4 ||phi||^2
               generator  core + 1e-4 ||theta||^2

trained in an intertwined scheme (five critic steps per generator step) with
Adam(beta1=0.5, beta2=0.9) and a noisy linear-cosine learning-rate decay from
2e-4.  An ``unconditional`` ablation trains the classical single-image critic
D(x, y) instead; it is expected to mode-collapse.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import persistence as ps
from .networks import NetConfig, NetworkHandle, build_discriminator, build_generator
from .priors import AugmentationConfig, Dataset
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

CORE_LOSS_FORMS = ("symmetrized_z1", "z2_first_term")
DRIFT_INPUTS = ("duplicate", "pair_with_sample")


@dataclass
class WganBatch:
    x: torch.Tensor
    y: torch.Tensor
    z1: torch.Tensor
    z2: torch.Tensor
    eps: torch.Tensor  # (B, 1, 1, 1)


def make_wgan_batch(x: torch.Tensor, y: torch.Tensor) -> WganBatch:
    """Fresh white-noise draws z1, z2 and interpolation draws eps ~ U(0,1)."""
    if x.shape != y.shape:
        raise ValueError("x and y must share a shape")
    b = x.shape[0]
    z1 = torch.randn_like(x)
    z2 = torch.randn_like(x)
    eps = torch.rand(b, 1, 1, 1, dtype=x.dtype)
    return WganBatch(x=x, y=y, z1=z1, z2=z2, eps=eps)


@dataclass
class TrainConfig:
    steps: int = 1500  # generator updates; each preceded by disc_steps_per_gen critic updates
    batch_size: int = 16
    lr0: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    disc_steps_per_gen: int = 5
    lambda_gp: float = 10.0
    lambda_drift: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    core_loss_form: str = "symmetrized_z1"
    drift_input: str = "duplicate"
    standardize: bool = True
    augment: AugmentationConfig | None = None
    checkpoint_every: int = 0  # cycles; 0 = only at completion
    # learning-rate schedule (noisy linear cosine decay)
    lr_num_periods: float = 0.5
    lr_initial_variance: float = 1.0
    lr_variance_decay: float = 0.55
    lr_alpha: float = 0.0
    lr_beta: float = 0.001
    # batchnorm running-stat settings, recorded for provenance (networks.py
    # hard-codes the equivalent torch momentum/eps)
    batchnorm_decay: float = 0.9
    batchnorm_eps: float = 1e-5

    def __post_init__(self):
        if self.disc_steps_per_gen < 1:
            raise ValueError("disc_steps_per_gen must be >= 1")
        for name in ("steps", "batch_size", "lr0", "lambda_gp", "weight_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.core_loss_form not in CORE_LOSS_FORMS:
            raise ValueError(f"core_loss_form must be one of {CORE_LOSS_FORMS}")
        if self.drift_input not in DRIFT_INPUTS:
            raise ValueError(f"drift_input must be one of {DRIFT_INPUTS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = asdict(self.augment) if self.augment is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("augment") is not None:
            d["augment"] = AugmentationConfig(**d["augment"])
        return cls(**d)


# ---------------------------------------------------------------------------
# losses (paired critic)
# ---------------------------------------------------------------------------

def wgan_core_loss(
    batch: WganBatch,
    gen: NetworkHandle,
    disc: NetworkHandle,
    form: str = "symmetrized_z1",
    detach_gen: bool = False,
) -> torch.Tensor:
    g1 = gen(batch.z1, batch.y)
    g2 = gen(batch.z2, batch.y)
    if detach_gen:
        g1, g2 = g1.detach(), g2.detach()
    if form == "symmetrized_z1":
        mixed = 0.5 * (disc(batch.x, g1, batch.y) + disc(g1, batch.x, batch.y))
    elif form == "z2_first_term":
        mixed = 0.5 * (disc(batch.x, g2, batch.y) + disc(g1, batch.x, batch.y))
    else:
        raise ValueError(f"unknown core loss form {form!r}")
    loss = (mixed - disc(g1, g2, batch.y)).mean()
    if not torch.isfinite(loss):
        raise NumericalFailure(f"core loss is non-finite: {loss.item()}")
    return loss


def _pair_gradient(disc, u1, u2, y):
    out = disc(u1, u2, y).sum()
    if not out.requires_grad:
        # critic ignores its inputs entirely (e.g. a constant test critic)
        return torch.zeros_like(u1), torch.zeros_like(u2)
    g1, g2 = torch.autograd.grad(out, (u1, u2), create_graph=True, allow_unused=True)
    if g1 is None:
        g1 = torch.zeros_like(u1)
    if g2 is None:
        g2 = torch.zeros_like(u2)
    return g1, g2


def gradient_penalty(batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle) -> torch.Tensor:
    with torch.no_grad():
        g1 = gen(batch.z1, batch.y)
        g2 = gen(batch.z2, batch.y)
    eps = batch.eps
    a1_first = (eps * batch.x + (1 - eps) * g1).requires_grad_(True)
    a1_second = (eps * g1 + (1 - eps) * g2).requires_grad_(True)
    a2_first = (eps * g1 + (1 - eps) * g1).requires_grad_(True)
    a2_second = (eps * batch.x + (1 - eps) * g2).requires_grad_(True)
    d1_first, d1_second = _pair_gradient(disc, a1_first, a1_second, batch.y)
    d2_first, d2_second = _pair_gradient(disc, a2_first, a2_second, batch.y)
    gamma_first = 0.5 * (d1_first + d2_first)
    gamma_second = 0.5 * (d1_second + d2_second)
    sq = gamma_first.flatten(1).square().sum(dim=1) + gamma_second.flatten(1).square().sum(dim=1)
    norms = torch.sqrt(sq + 1e-24)
    penalty = ((norms - 1.0) ** 2).mean()
    if not torch.isfinite(penalty):
        raise NumericalFailure("gradient penalty is non-finite")
    return penalty


def drift_penalty(
    batch: WganBatch, disc: NetworkHandle, drift_input: str = "duplicate",
    gen: NetworkHandle | None = None,
) -> torch.Tensor:
    if drift_input == "duplicate":
        scores = disc(batch.x, batch.x, batch.y)
    elif drift_input == "pair_with_sample":
        if gen is None:
            raise ValueError("pair_with_sample drift needs the generator")
        with torch.no_grad():
            g1 = gen(batch.z1, batch.y)
        scores = disc(batch.x, g1, batch.y)
    else:
        raise ValueError(f"unknown drift input {drift_input!r}")
    return scores.square().mean()


def discriminator_loss(
    batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle, cfg: TrainConfig
) -> tuple[torch.Tensor, dict]:
    core = wgan_core_loss(batch, gen, disc, cfg.core_loss_form, detach_gen=True)
    gp = gradient_penalty(batch, gen, disc)
    drift = drift_penalty(batch, disc, cfg.drift_input, gen)
    wd = weight_norm_sq(disc.module)
    loss = -core + cfg.lambda_gp * gp + cfg.lambda_drift * drift + cfg.weight_decay * wd
    comps = {
        "core": core.item(),
        "grad_penalty": gp.item(),
        "drift": drift.item(),
        "disc_weight_sq": wd.item(),
    }
    return loss, comps


def generator_loss(
    batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle, cfg: TrainConfig
) -> torch.Tensor:
    core = wgan_core_loss(batch, gen, disc, cfg.core_loss_form, detach_gen=False)
    return core + cfg.weight_decay * weight_norm_sq(gen.module)


# ---------------------------------------------------------------------------
# losses (single-image critic ablation)
# ---------------------------------------------------------------------------

def wgan_core_loss_single(
    batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle, detach_gen: bool = False
) -> torch.Tensor:
    g1 = gen(batch.z1, batch.y)
    if detach_gen:
        g1 = g1.detach()
    return (disc(batch.x, batch.y) - disc(g1, batch.y)).mean()


def gradient_penalty_single(
    batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle
) -> torch.Tensor:
    with torch.no_grad():
        g1 = gen(batch.z1, batch.y)
    a = (batch.eps * batch.x + (1 - batch.eps) * g1).requires_grad_(True)
    out = disc(a, batch.y).sum()
    (grad,) = torch.autograd.grad(out, a, create_graph=True)
    norms = torch.sqrt(grad.flatten(1).square().sum(dim=1) + 1e-24)
    return ((norms - 1.0) ** 2).mean()


def discriminator_loss_single(
    batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle, cfg: TrainConfig
) -> tuple[torch.Tensor, dict]:
    core = wgan_core_loss_single(batch, gen, disc, detach_gen=True)
    gp = gradient_penalty_single(batch, gen, disc)
    drift = disc(batch.x, batch.y).square().mean()
    wd = weight_norm_sq(disc.module)
    loss = -core + cfg.lambda_gp * gp + cfg.lambda_drift * drift + cfg.weight_decay * wd
    comps = {
        "core": core.item(),
        "grad_penalty": gp.item(),
        "drift": drift.item(),
        "disc_weight_sq": wd.item(),
    }
    return loss, comps


def generator_loss_single(
    batch: WganBatch, gen: NetworkHandle, disc: NetworkHandle, cfg: TrainConfig
) -> torch.Tensor:
    core = wgan_core_loss_single(batch, gen, disc, detach_gen=False)
    return core + cfg.weight_decay * weight_norm_sq(gen.module)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def train_wgan(
    dataset: Dataset,
    gen_cfg: NetConfig,
    disc_cfg: NetConfig,
    cfg: TrainConfig,
    runs_root: str | Path,
    run_id: str | None = None,
    paired: bool = True,
    resume: bool = False,
) -> Path:
    """Train and persist a posterior sampler; returns the run directory.

    Fully seeded: equal seeds give bit-identical loss curves and checkpoints.
    A non-finite loss aborts with the last good state saved under
    checkpoints/last_good.
    """
    torch.use_deterministic_algorithms(True)
    if run_id is None:
        tag = "wgan" if paired else "wgan-uncond"
        run_id = f"{tag}_{dataset.fingerprint[:8]}_s{cfg.seed}"
    runs_root = Path(runs_root)
    run_dir = runs_root / run_id

    gen = build_generator(gen_cfg, seed=cfg.seed)
    disc = build_discriminator(disc_cfg, paired=paired, seed=cfg.seed + 1)
    opt_g = make_adam(gen.parameters(), cfg.lr0, cfg.adam_beta1, cfg.adam_beta2)
    opt_d = make_adam(disc.parameters(), cfg.lr0, cfg.adam_beta1, cfg.adam_beta2)

    latest = run_dir / ps.CHECKPOINT_DIR / "latest"
    if resume:
        manifest = ps.read_manifest(run_dir)
        std = Standardization.from_dict(manifest.config["standardization"])
        load_module(latest, "generator", gen.module)
        load_module(latest, "discriminator", disc.module)
        load_optimizer(latest, "opt_generator", opt_g)
        load_optimizer(latest, "opt_discriminator", opt_d)
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
            kind="wgan",
            config={
                "gen": gen_cfg.to_dict(),
                "disc": disc_cfg.to_dict(),
                "train": cfg.to_dict(),
                "standardization": std.to_dict(),
                "paired": paired,
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
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 17]))
        start = 0
        curves = {
            k: []
            for k in ("disc_loss", "gen_loss", "core", "grad_penalty", "drift", "lr")
        }

    d_loss_fn = discriminator_loss if paired else discriminator_loss_single
    g_loss_fn = generator_loss if paired else generator_loss_single

    def snapshot(target: Path):
        target.mkdir(parents=True, exist_ok=True)
        save_module(target, "generator", gen.module)
        save_module(target, "discriminator", disc.module)
        save_optimizer(target, "opt_generator", opt_g)
        save_optimizer(target, "opt_discriminator", opt_d)
        save_rng(target, rng)
        save_progress(target, {"cycles_done": cycle + 1})
        save_loss_curves(run_dir, curves)

    last_good = None
    cycle = start - 1
    try:
        for cycle in range(start, cfg.steps):
            lr = noisy_linear_cosine_lr(
                cfg.lr0,
                cycle,
                cfg.steps,
                rng,
                num_periods=cfg.lr_num_periods,
                initial_variance=cfg.lr_initial_variance,
                variance_decay=cfg.lr_variance_decay,
                alpha=cfg.lr_alpha,
                beta=cfg.lr_beta,
            )
            set_lr(opt_g, lr)
            set_lr(opt_d, lr)
            for _ in range(cfg.disc_steps_per_gen):
                x, y = draw_batch(dataset, cfg.batch_size, rng, std, cfg.augment)
                batch = make_wgan_batch(x, y)
                opt_d.zero_grad()
                d_loss, comps = d_loss_fn(batch, gen, disc, cfg)
                if not torch.isfinite(d_loss):
                    raise NumericalFailure(f"critic loss non-finite at cycle {cycle}")
                d_loss.backward()
                opt_d.step()
            x, y = draw_batch(dataset, cfg.batch_size, rng, std, cfg.augment)
            batch = make_wgan_batch(x, y)
            opt_g.zero_grad()
            g_loss = g_loss_fn(batch, gen, disc, cfg)
            if not torch.isfinite(g_loss):
                raise NumericalFailure(f"generator loss non-finite at cycle {cycle}")
            g_loss.backward()
            opt_g.step()

            curves["disc_loss"].append(d_loss.item())
            curves["gen_loss"].append(g_loss.item())
            curves["core"].append(comps["core"])
            curves["grad_penalty"].append(comps["grad_penalty"])
            curves["drift"].append(comps["drift"])
            curves["lr"].append(lr)
            last_good = (
                copy.deepcopy(gen.module.state_dict()),
                copy.deepcopy(disc.module.state_dict()),
            )
            if cfg.checkpoint_every and (cycle + 1) % cfg.checkpoint_every == 0:
                snapshot(latest)
    except NumericalFailure:
        if last_good is not None:
            gen.module.load_state_dict(last_good[0])
            disc.module.load_state_dict(last_good[1])
            snapshot(run_dir / ps.CHECKPOINT_DIR / "last_good")
        raise

    snapshot(latest)
    snapshot(run_dir / ps.CHECKPOINT_DIR / "final")
    return run_dir


def train_wgan_unconditional_discriminator(
    dataset: Dataset,
    gen_cfg: NetConfig,
    disc_cfg: NetConfig,
    cfg: TrainConfig,
    runs_root: str | Path,
    run_id: str | None = None,
    resume: bool = False,
) -> Path:
    """Ablation: classical single-image critic D(x, y); expected to collapse."""
    return train_wgan(
        dataset, gen_cfg, disc_cfg, cfg, runs_root, run_id=run_id, paired=False,
        resume=resume,
    )


# ---------------------------------------------------------------------------
# sampling from a trained run
# ---------------------------------------------------------------------------

def load_generator(run_dir: str | Path, checkpoint: str = "final"):
    run_dir = Path(run_dir)
    manifest = ps.read_manifest(run_dir)
    gen_cfg = NetConfig.from_dict(manifest.config["gen"])
    gen = build_generator(gen_cfg, seed=0)
    load_module(run_dir / ps.CHECKPOINT_DIR / checkpoint, "generator", gen.module)
    gen.module.eval()
    std = Standardization.from_dict(manifest.config["standardization"])
    return gen, std, manifest


def sample_posterior(
    run_dir: str | Path,
    y: np.ndarray,
    n: int = 1000,
    seed: int = 0,
    tag: str = "default",
    batch_size: int = 100,
) -> np.ndarray:
    """n generator draws G(z_i, y); streamed to samples/<tag>/samples.bin."""
    run_dir = Path(run_dir)
    gen, std, manifest = load_generator(run_dir)
    size = gen.config.image_size
    y = np.asarray(y, dtype=np.float32)
    if y.shape != (size, size):
        raise ValueError(f"conditioning image must be {size}x{size}, got {y.shape}")
    y_t = torch.from_numpy(std.encode(y)).float().reshape(1, 1, size, size)
    rng = torch.Generator().manual_seed(seed)
    out = np.empty((n, size, size), dtype=np.float32)
    with torch.no_grad():
        done = 0
        while done < n:
            b = min(batch_size, n - done)
            z = torch.randn(b, 1, size, size, generator=rng)
            draws = gen(z, y_t.expand(b, 1, size, size))
            out[done : done + b] = std.decode(draws.squeeze(1).numpy())
            done += b
    sample_dir = run_dir / ps.SAMPLES_DIR / tag
    sample_dir.mkdir(parents=True, exist_ok=True)
    ps.write_tensor(sample_dir / "samples.bin", out)
    ps.write_tensor(sample_dir / "condition.bin", y)
    (sample_dir / "meta.json").write_text(json.dumps({"n": n, "seed": seed}))
    return out
