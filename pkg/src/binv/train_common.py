"""Shared training plumbing: standardization, batch drawing, the learning-rate
schedule, checkpoint I/O (one tensor file per parameter plus a JSON index),
and optimizer/RNG state persistence for resumable runs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import persistence as ps
from .networks import load_state_tensors, state_tensors
from .priors import AugmentationConfig, Dataset, augment


class NumericalFailure(RuntimeError):
    """Training hit a non-finite loss; the last good checkpoint was saved."""


@dataclass
class Standardization:
    mean: float
    std: float

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "Standardization":
        xs = np.stack([p.x for p in dataset.pairs]).astype(np.float64)
        mean = float(xs.mean())
        std = float(xs.std())
        # float32 rounding leaves a tiny spurious std on constant datasets
        if std <= 1e-7 * max(1.0, abs(mean)):
            std = 1.0
        return cls(mean=mean, std=std)

    def encode(self, arr: np.ndarray) -> np.ndarray:
        return (arr - self.mean) / self.std

    def decode(self, arr: np.ndarray) -> np.ndarray:
        return arr * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(mean=d["mean"], std=d["std"])


def noisy_linear_cosine_lr(
    lr0: float,
    step: int,
    total_steps: int,
    rng: np.random.Generator,
    num_periods: float = 0.5,
    initial_variance: float = 1.0,
    variance_decay: float = 0.55,
    alpha: float = 0.0,
    beta: float = 0.001,
) -> float:
    """Linear-cosine decay with a decaying noise term on the linear part.

    The factor is clamped at zero so a large negative noise draw cannot turn
    the learning rate negative.
    """
    t = min(step, total_steps) / max(total_steps, 1)
    linear = 1.0 - t
    sigma = np.sqrt(initial_variance / (1.0 + step) ** variance_decay)
    eps = rng.normal(0.0, sigma)
    cosine = 0.5 * (1.0 + np.cos(np.pi * 2.0 * num_periods * t))
    factor = (alpha + linear + eps) * cosine + beta
    return lr0 * max(factor, 0.0)


def draw_batch(
    dataset: Dataset,
    batch_size: int,
    rng: np.random.Generator,
    std: Standardization,
    aug: AugmentationConfig | None,
):
    """Sample pairs with replacement, augment per draw, standardize, tensorize.

    Returns (x, y) tensors of shape (B, 1, H, W).
    """
    idx = rng.integers(0, len(dataset.pairs), size=batch_size)
    xs, ys = [], []
    for i in idx:
        pair = dataset.pairs[int(i)]
        if aug is not None and not aug.all_off():
            pair = augment(pair, aug, seed=int(rng.integers(2**63 - 1)))
        xs.append(std.encode(np.asarray(pair.x, dtype=np.float32)))
        ys.append(std.encode(np.asarray(pair.y, dtype=np.float32)))
    x = torch.from_numpy(np.stack(xs)).unsqueeze(1).float()
    y = torch.from_numpy(np.stack(ys)).unsqueeze(1).float()
    return x, y


def make_adam(params, lr0: float, beta1: float, beta2: float) -> torch.optim.Adam:
    # weight decay enters the losses explicitly, never the optimizer
    return torch.optim.Adam(params, lr=lr0, betas=(beta1, beta2))


def set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def weight_norm_sq(module: torch.nn.Module) -> torch.Tensor:
    return sum((p**2).sum() for p in module.parameters())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_module(ckpt_dir: Path, name: str, module: torch.nn.Module) -> None:
    sub = ckpt_dir / name
    sub.mkdir(parents=True, exist_ok=True)
    index = {}
    for pname, arr in state_tensors(module).items():
        fname = pname.replace("/", "_") + ".bin"
        tensor = arr if arr.ndim >= 1 else arr.reshape(1)
        ps.write_tensor(sub / fname, tensor)
        index[pname] = {"file": fname, "scalar": arr.ndim == 0}
    (sub / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))


def load_module(ckpt_dir: Path, name: str, module: torch.nn.Module) -> None:
    sub = Path(ckpt_dir) / name
    index = json.loads((sub / "index.json").read_text())
    tensors = {}
    for pname, meta in index.items():
        arr = ps.read_tensor(sub / meta["file"])
        tensors[pname] = arr.reshape(()) if meta.get("scalar") else arr
    load_state_tensors(module, tensors)


def save_optimizer(ckpt_dir: Path, name: str, opt: torch.optim.Optimizer) -> None:
    sub = ckpt_dir / name
    sub.mkdir(parents=True, exist_ok=True)
    state = opt.state_dict()
    meta = {"param_groups": state["param_groups"], "steps": {}, "tensors": {}}
    for pid, pstate in state["state"].items():
        meta["steps"][str(pid)] = int(pstate["step"])
        for key in ("exp_avg", "exp_avg_sq"):
            fname = f"{pid}.{key}.bin"
            arr = pstate[key].detach().cpu().numpy()
            ps.write_tensor(sub / fname, arr if arr.ndim >= 1 else arr.reshape(1))
            meta["tensors"][f"{pid}.{key}"] = {"file": fname, "scalar": arr.ndim == 0}
    (sub / "opt.json").write_text(json.dumps(meta, indent=1))


def load_optimizer(ckpt_dir: Path, name: str, opt: torch.optim.Optimizer) -> None:
    sub = Path(ckpt_dir) / name
    meta = json.loads((sub / "opt.json").read_text())
    state = {"param_groups": meta["param_groups"], "state": {}}
    for pid_str, step in meta["steps"].items():
        pid = int(pid_str)
        entry = {"step": torch.tensor(float(step))}
        for key in ("exp_avg", "exp_avg_sq"):
            info = meta["tensors"][f"{pid}.{key}"]
            arr = ps.read_tensor(sub / info["file"])
            t = torch.from_numpy(arr.reshape(()) if info.get("scalar") else arr)
            entry[key] = t
        state["state"][pid] = entry
    opt.load_state_dict(state)


def save_rng(ckpt_dir: Path, np_rng: np.random.Generator) -> None:
    payload = {
        "torch": torch.get_rng_state().numpy().tobytes().hex(),
        "numpy": np_rng.bit_generator.state,
    }
    (ckpt_dir / "rng.json").write_text(json.dumps(payload))


def load_rng(ckpt_dir: Path) -> np.random.Generator:
    payload = json.loads((Path(ckpt_dir) / "rng.json").read_text())
    torch.set_rng_state(
        torch.frombuffer(bytearray(bytes.fromhex(payload["torch"])), dtype=torch.uint8).clone()
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["numpy"]
    return rng


def save_progress(ckpt_dir: Path, payload: dict) -> None:
    (ckpt_dir / "progress.json").write_text(json.dumps(payload, indent=1))


def load_progress(ckpt_dir: Path) -> dict:
    return json.loads((Path(ckpt_dir) / "progress.json").read_text())


def save_loss_curves(run_dir: Path, columns: dict) -> None:
    names = sorted(columns)
    mat = np.stack([np.asarray(columns[k], dtype=np.float32) for k in names], axis=1)
    ps.write_tensor(Path(run_dir) / ps.TENSORS_DIR / "loss_curves.bin", mat)
    (Path(run_dir) / ps.TENSORS_DIR / "loss_curves.json").write_text(
        json.dumps({"columns": names})
    )


def load_loss_curves(run_dir: Path) -> dict:
    mat = ps.read_tensor(Path(run_dir) / ps.TENSORS_DIR / "loss_curves.bin")
    names = json.loads((Path(run_dir) / ps.TENSORS_DIR / "loss_curves.json").read_text())[
        "columns"
    ]
    return {name: mat[:, k] for k, name in enumerate(names)}
