"""Report rendering: figures (posterior mean, pointwise std, ROI histogram
with threshold line) and a delimited summary next to them."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import scipy.stats

from . import HU_PER_UNIT
from . import persistence as ps
from .imaging import DEFAULT_PSTD_WINDOW_HU, DEFAULT_WINDOW_HU


def save_image_figure(
    path: Path,
    img_units: np.ndarray,
    title: str,
    window_hu=DEFAULT_WINDOW_HU,
    cmap: str = "gray",
) -> None:
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    im = ax.imshow(
        np.asarray(img_units) * HU_PER_UNIT,
        cmap=cmap,
        vmin=window_hu[0],
        vmax=window_hu[1],
        interpolation="nearest",
    )
    ax.set_title(title)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, fraction=0.046, label="HU")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_delta_histogram(
    path: Path,
    sampling: dict | None,
    direct: dict | None,
    tau_hu: float,
    true_delta_hu: float | None = None,
) -> None:
    """Sampling-path histogram with the threshold line and, when available,
    the direct path's Normal density overlaid."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    if sampling is not None:
        deltas = np.asarray(sampling["delta_samples"], dtype=np.float64)
        ax.hist(deltas, bins=40, density=True, alpha=0.65, color="#4878d0",
                label=f"sampling (n={len(deltas)}, p={sampling['p_value']:.3f})")
    if direct is not None and direct["sigma_delta"] > 0:
        mu, sigma = direct["mu_delta"], direct["sigma_delta"]
        grid = np.linspace(mu - 4 * sigma, mu + 4 * sigma, 300)
        ax.plot(grid, scipy.stats.norm.pdf(grid, mu, sigma), color="#d8b440", lw=2,
                label=f"direct (p={direct['p_value']:.3f})")
    ax.axvline(tau_hu, color="red", ls="--", lw=1.5, label=f"threshold {tau_hu:g} HU")
    if true_delta_hu is not None:
        ax.axvline(true_delta_hu, color="black", ls=":", lw=1.5, label="true contrast")
    ax.set_xlabel("ROI contrast difference [HU]")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_summary_csv(path: Path, rows: list[dict]) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def _image_stats(name: str, img: np.ndarray) -> dict:
    hu = np.asarray(img, dtype=np.float64) * HU_PER_UNIT
    return {
        "image": name,
        "mean_hu": round(float(hu.mean()), 4),
        "std_hu": round(float(hu.std()), 4),
        "min_hu": round(float(hu.min()), 4),
        "max_hu": round(float(hu.max()), 4),
    }


def render_run_report(
    run_dir: str | Path,
    out_dir: str | Path | None = None,
    tag: str = "default",
    window_hu=DEFAULT_WINDOW_HU,
) -> Path:
    """Render every figure the run's artifacts support plus summary.csv."""
    from .analysis import sample_mean, sample_pstd  # local import to avoid cycles

    run_dir = Path(run_dir)
    manifest = ps.read_manifest(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []

    tag_dir = run_dir / ps.SAMPLES_DIR / tag
    if (tag_dir / "samples.bin").is_file():
        samples = ps.read_tensor(tag_dir / "samples.bin")
        mean = sample_mean(samples)
        pstd = sample_pstd(samples)
        save_image_figure(out / "mean_sampling.png", mean, "posterior mean (sampling)",
                          window_hu)
        save_image_figure(out / "pstd_sampling.png", pstd, "pointwise std (sampling)",
                          DEFAULT_PSTD_WINDOW_HU, cmap="viridis")
        rows.append(_image_stats("mean_sampling", mean))
        rows.append(_image_stats("pstd_sampling", pstd))
        for k in range(min(3, samples.shape[0])):
            save_image_figure(out / f"sample_{k}.png", samples[k], f"posterior sample {k}",
                              window_hu)
    if (tag_dir / "condition.bin").is_file():
        y = ps.read_tensor(tag_dir / "condition.bin")
        save_image_figure(out / "condition.png", y, "conditioning image", window_hu)
        rows.append(_image_stats("condition", y))
    if (tag_dir / "gt.bin").is_file():
        gt = ps.read_tensor(tag_dir / "gt.bin")
        save_image_figure(out / "gt.png", gt, "ground truth", window_hu)
        rows.append(_image_stats("gt", gt))
    if (tag_dir / "mean_direct.bin").is_file():
        mean_d = ps.read_tensor(tag_dir / "mean_direct.bin")
        save_image_figure(out / "mean_direct.png", mean_d, "posterior mean (direct)",
                          window_hu)
        rows.append(_image_stats("mean_direct", mean_d))
    if (tag_dir / "variance_direct.bin").is_file():
        var_d = ps.read_tensor(tag_dir / "variance_direct.bin")
        save_image_figure(out / "pstd_direct.png", np.sqrt(np.clip(var_d, 0, None)),
                          "pointwise std (direct)", DEFAULT_PSTD_WINDOW_HU, cmap="viridis")
        rows.append(_image_stats("pstd_direct", np.sqrt(np.clip(var_d, 0, None))))

    roi_dir = tag_dir / "roi_tests"
    if roi_dir.is_dir():
        for res_file in sorted(roi_dir.glob("*.json")):
            payload = json.loads(res_file.read_text())
            results = payload.get("results", {})
            save_delta_histogram(
                out / f"delta_{res_file.stem}.png",
                results.get("sampling"),
                results.get("direct"),
                tau_hu=payload["tau_hu"],
            )
            for method, res in results.items():
                rows.append(
                    {
                        "image": f"roi_{res_file.stem}_{method}",
                        "p_value": res["p_value"],
                        "mu_delta_hu": round(res["mu_delta"], 4),
                        "sigma_delta_hu": round(res["sigma_delta"], 4),
                    }
                )

    if manifest.kind == "dataset":
        xs = ps.read_tensor(ps.artifact_path(run_dir, manifest, "x"))
        ys = ps.read_tensor(ps.artifact_path(run_dir, manifest, "y"))
        for k in range(min(3, xs.shape[0])):
            save_image_figure(out / f"pair{k}_gt.png", xs[k], f"pair {k}: ground truth",
                              window_hu)
            save_image_figure(out / f"pair{k}_obs.png", ys[k], f"pair {k}: observation",
                              window_hu)
        rows.append(_image_stats("dataset_x", xs))
        rows.append(_image_stats("dataset_y", ys))
    if manifest.kind == "prior_sample":
        samples = ps.read_tensor(ps.artifact_path(run_dir, manifest, "samples"))
        lo, hi = np.percentile(samples[0], [2, 98]) * HU_PER_UNIT
        for k in range(min(4, samples.shape[0])):
            save_image_figure(out / f"prior_sample_{k}.png", samples[k],
                              f"{manifest.config.get('prior', {}).get('kind', 'prior')} sample {k}",
                              window_hu=(lo, hi if hi > lo else lo + 1.0))
        rows.append(_image_stats("prior_samples", samples))

    if (run_dir / ps.TENSORS_DIR / "loss_curves.bin").is_file():
        from .train_common import load_loss_curves

        curves = load_loss_curves(run_dir)
        fig, ax = plt.subplots(figsize=(5.6, 3.4))
        for name, vals in curves.items():
            if name == "lr":
                continue
            ax.plot(vals, label=name, lw=1)
        ax.set_xlabel("cycle")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "loss_curves.png", dpi=130)
        plt.close(fig)

    write_summary_csv(out / "summary.csv", rows or [{"image": "none"}])
    return out
