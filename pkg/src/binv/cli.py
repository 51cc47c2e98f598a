"""Command-line entry point orchestrating every pipeline stage.

Every command resolves runs under a single run root (--runs or $BINV_RUNS)
and is fully determined by its config file and --seed.  Exit codes:
0 ok, 2 config error, 3 missing dependency run, 4 numerical failure.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import HU_PER_UNIT
from . import persistence as ps
from .analysis import decode_mask_rle, roi_test_direct, roi_test_sampling, sample_pstd
from .networks import NetConfig
from .oracle import DecompositionError
from .priors import ChainDiverged, GibbsPrior, mala_chain
from .problems import ConfigError, build_dataset, load_dataset_run, save_dataset_run
from .train_common import NumericalFailure
from .wgan_training import TrainConfig

EXIT_CONFIG = 2
EXIT_MISSING_RUN = 3
EXIT_NUMERICAL = 4


class MissingRunError(FileNotFoundError):
    pass


def _load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _run_dir(root: Path, run_id: str) -> Path:
    d = root / run_id
    if not (d / ps.MANIFEST_NAME).is_file():
        raise MissingRunError(f"run {run_id!r} not found under {root}")
    return d


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ps.ManifestSchemaError, ValueError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (MissingRunError, FileNotFoundError) as exc:
            click.echo(f"missing run or artifact: {exc}", err=True)
            sys.exit(EXIT_MISSING_RUN)
        except (NumericalFailure, ChainDiverged, DecompositionError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


@click.group()
@click.option(
    "--runs",
    envvar="BINV_RUNS",
    default="runs",
    show_default=True,
    help="Run-directory root (env BINV_RUNS).",
)
@click.pass_context
def main(ctx, runs):
    ctx.obj = Path(runs)


@main.command("gen-data")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "run_id", default=None, help="Run id (default derived from fingerprint).")
@click.pass_obj
@handle_errors
def cmd_gen_data(root, config_path, seed, run_id):
    """Generate a supervised dataset run from a problem config."""
    cfg = _load_config(config_path)
    if "problem" not in cfg or "dataset" not in cfg:
        raise ConfigError("config needs 'problem' and 'dataset' sections")
    n = int(cfg["dataset"].get("n", 128))
    used_seed = int(seed if seed is not None else cfg["dataset"].get("seed", 0))
    dataset = build_dataset(cfg["problem"], n, used_seed)
    if run_id is None:
        run_id = f"data_{dataset.fingerprint[:10]}"
    run = save_dataset_run(root, run_id, dataset, cfg, used_seed)
    click.echo(json.dumps({"run_id": run_id, "run_dir": str(run),
                           "fingerprint": dataset.fingerprint, "n": n}))


@main.command("prior-sample")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--out", "run_id", default=None)
@click.pass_obj
@handle_errors
def cmd_prior_sample(root, config_path, seed, run_id):
    """Draw Gibbs-prior samples with the Langevin sampler."""
    cfg = _load_config(config_path)
    prior_cfg = cfg.get("prior")
    if prior_cfg is None:
        raise ConfigError("config needs a 'prior' section")
    used_seed = int(seed if seed is not None else cfg.get("seed", 0))
    prior = GibbsPrior(
        kind=prior_cfg["kind"],
        weight=float(prior_cfg.get("weight", 1.0)),
        tv_smoothing=float(prior_cfg.get("tv_smoothing", 1e-2)),
        wavelet_levels=int(prior_cfg.get("wavelet_levels", 3)),
    )
    mala = dict(cfg.get("mala", {}))
    n_samples = int(cfg.get("n_samples", 4))
    size = int(cfg.get("image_size", 64))
    n_steps = int(mala.get("n_steps", 4000))
    res = mala_chain(
        prior,
        size,
        n_steps=n_steps,
        step_size=float(mala.get("step_size", 0.1)),
        burn_in=int(mala.get("burn_in", n_steps // 4)),
        seed=used_seed,
        thin=max(1, (n_steps - int(mala.get("burn_in", n_steps // 4))) // max(n_samples, 1)),
    )
    samples = res.samples[-n_samples:] if len(res.samples) >= n_samples else res.samples
    if run_id is None:
        run_id = f"prior_{prior.kind}_s{used_seed}"
    run = ps.new_run_dir(root, run_id)
    ps.write_tensor(run / ps.TENSORS_DIR / "samples.bin", np.asarray(samples, dtype=np.float32))
    manifest = ps.RunManifest(
        run_id=run_id,
        kind="prior_sample",
        config={
            "prior": prior_cfg,
            "mala": {**mala, "tuned_step": res.step_size,
                     "acceptance_rate": res.acceptance_rate},
            "image_size": size,
            "n_samples": int(len(samples)),
        },
        seed=used_seed,
        dataset_fingerprint="",
        artifact_paths={"samples": f"{ps.TENSORS_DIR}/samples.bin"},
    )
    ps.write_manifest(run, manifest)
    click.echo(json.dumps({"run_id": run_id, "acceptance_rate": res.acceptance_rate,
                           "tuned_step": res.step_size}))


def _net_cfg(section: dict | None, image_size: int, **overrides) -> NetConfig:
    d = dict(section or {})
    d.setdefault("image_size", image_size)
    d.update(overrides)
    try:
        return NetConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad network config: {exc}") from exc


def _train_cfg(section: dict | None, seed: int | None) -> TrainConfig:
    d = dict(section or {})
    if seed is not None:
        d["seed"] = int(seed)
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from exc


@main.command("train-wgan")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_id", required=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "run_id", default=None)
@click.option("--resume", is_flag=True, help="Continue from the latest checkpoint.")
@click.option("--unconditional", is_flag=True,
              help="Ablation: single-image critic (expected to mode-collapse).")
@click.pass_obj
@handle_errors
def cmd_train_wgan(root, config_path, dataset_id, seed, run_id, resume, unconditional):
    """Train the conditional posterior sampler."""
    from .wgan_training import train_wgan

    cfg = _load_config(config_path)
    dataset, _ = load_dataset_run(_run_dir(root, dataset_id))
    size = dataset.pairs[0].x.shape[0]
    nets_cfg = cfg.get("networks", {})
    gen_cfg = _net_cfg(nets_cfg.get("gen"), size)
    disc_cfg = _net_cfg(nets_cfg.get("disc"), size)
    train_cfg = _train_cfg(cfg.get("training"), seed)
    run = train_wgan(
        dataset, gen_cfg, disc_cfg, train_cfg, root,
        run_id=run_id, paired=not unconditional, resume=resume,
    )
    click.echo(json.dumps({"run_id": run.name, "run_dir": str(run)}))


@main.command("train-direct")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--dataset", "dataset_id", required=True)
@click.option("--stage", type=click.Choice(["mean", "variance"]), default="mean")
@click.option("--mean-run", "mean_run_id", default=None,
              help="Mean run to train the variance stage against.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "run_id", default=None)
@click.option("--resume", is_flag=True)
@click.pass_obj
@handle_errors
def cmd_train_direct(root, config_path, dataset_id, stage, mean_run_id, seed, run_id, resume):
    """Train the direct mean or pointwise-variance estimator."""
    from .direct_estimation import train_mean, train_variance

    cfg = _load_config(config_path)
    dataset, _ = load_dataset_run(_run_dir(root, dataset_id))
    size = dataset.pairs[0].x.shape[0]
    net_cfg = _net_cfg(cfg.get("networks", {}).get("estimator"), size)
    train_cfg = _train_cfg(cfg.get("training"), seed)
    if stage == "mean":
        run = train_mean(dataset, net_cfg, train_cfg, root, run_id=run_id, resume=resume)
    else:
        if mean_run_id is None:
            raise ConfigError("--mean-run is required for the variance stage")
        mean_dir = _run_dir(root, mean_run_id)
        run = train_variance(dataset, mean_dir, net_cfg, train_cfg, root,
                             run_id=run_id, resume=resume)
    click.echo(json.dumps({"run_id": run.name, "run_dir": str(run)}))


def _resolve_condition(root, y_file, y_dataset, y_index):
    if y_file is not None:
        return ps.read_tensor(y_file), None
    if y_dataset is None:
        raise ConfigError("provide --y-file or --y-dataset/--y-index")
    dataset, _ = load_dataset_run(_run_dir(root, y_dataset))
    if not 0 <= y_index < len(dataset.pairs):
        raise ConfigError(f"--y-index {y_index} out of range (dataset has {len(dataset.pairs)})")
    pair = dataset.pairs[y_index]
    return pair.y, pair.x


@main.command("sample")
@click.option("--run", "run_id", required=True, help="Trained wgan run.")
@click.option("--y-file", type=click.Path(), default=None)
@click.option("--y-dataset", default=None)
@click.option("--y-index", type=int, default=0)
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--tag", default="default")
@click.pass_obj
@handle_errors
def cmd_sample(root, run_id, y_file, y_dataset, y_index, n, seed, tag):
    """Draw posterior samples from a trained sampler and cache them."""
    from .wgan_training import sample_posterior

    run = _run_dir(root, run_id)
    y, x_gt = _resolve_condition(root, y_file, y_dataset, y_index)
    samples = sample_posterior(run, y, n=n, seed=seed, tag=tag)
    if x_gt is not None:
        ps.write_tensor(run / ps.SAMPLES_DIR / tag / "gt.bin", x_gt)
    click.echo(json.dumps({
        "run_id": run_id, "tag": tag, "n": n,
        "pstd_mean_hu": float(sample_pstd(samples).mean() * HU_PER_UNIT),
    }))


@main.command("estimate")
@click.option("--mean-run", "mean_run_id", required=True)
@click.option("--var-run", "var_run_id", default=None)
@click.option("--y-file", type=click.Path(), default=None)
@click.option("--y-dataset", default=None)
@click.option("--y-index", type=int, default=0)
@click.option("--into", "into_run_id", default=None,
              help="Write estimates into this run's samples/<tag>/ (default: the mean run).")
@click.option("--tag", default="default")
@click.pass_obj
@handle_errors
def cmd_estimate(root, mean_run_id, var_run_id, y_file, y_dataset, y_index, into_run_id, tag):
    """Evaluate the trained direct estimators on a conditioning image."""
    from .direct_estimation import predict_mean, predict_variance

    mean_run = _run_dir(root, mean_run_id)
    y, x_gt = _resolve_condition(root, y_file, y_dataset, y_index)
    target = _run_dir(root, into_run_id) if into_run_id else mean_run
    out_dir = target / ps.SAMPLES_DIR / tag
    out_dir.mkdir(parents=True, exist_ok=True)
    mean_img = predict_mean(mean_run, y)
    ps.write_tensor(out_dir / "mean_direct.bin", mean_img)
    payload = {"run_id": target.name, "tag": tag}
    if var_run_id is not None:
        var_run = _run_dir(root, var_run_id)
        var_img = predict_variance(var_run, y)
        ps.write_tensor(out_dir / "variance_direct.bin", var_img)
        payload["pstd_direct_mean_hu"] = float(
            np.sqrt(np.clip(var_img, 0, None)).mean() * HU_PER_UNIT
        )
    if not (out_dir / "condition.bin").is_file():
        ps.write_tensor(out_dir / "condition.bin", y)
    if x_gt is not None and not (out_dir / "gt.bin").is_file():
        ps.write_tensor(out_dir / "gt.bin", x_gt)
    click.echo(json.dumps(payload))


def _load_mask(path: str) -> np.ndarray:
    return decode_mask_rle(json.loads(Path(path).read_text()))


@main.command("roi-test")
@click.option("--run", "run_id", required=True)
@click.option("--tag", default="default")
@click.option("--feature", "feature_path", required=True, type=click.Path())
@click.option("--reference", "reference_path", required=True, type=click.Path())
@click.option("--tau", type=float, default=10.0, show_default=True, help="Threshold in HU.")
@click.option("--method", type=click.Choice(["sampling", "direct", "both"]), default="sampling")
@click.pass_obj
@handle_errors
def cmd_roi_test(root, run_id, tag, feature_path, reference_path, tau, method):
    """ROI hypothesis test: p = Prob(contrast difference > tau)."""
    run = _run_dir(root, run_id)
    result = run_roi_test(run, tag, _load_mask(feature_path), _load_mask(reference_path),
                          tau, method)
    click.echo(json.dumps(result, indent=1))


def run_roi_test(
    run_dir: Path, tag: str, feature: np.ndarray, reference: np.ndarray,
    tau_hu: float, method: str, persist: bool = True,
) -> dict:
    """Shared by the CLI and the HTTP service so both produce identical p.

    The CLI persists each result under samples/<tag>/roi_tests/; the service
    calls with persist=False to stay read-only over run data.
    """
    tag_dir = Path(run_dir) / ps.SAMPLES_DIR / tag
    results = {}
    if method in ("sampling", "both"):
        samples_file = tag_dir / "samples.bin"
        if not samples_file.is_file():
            raise MissingRunError(f"no cached samples under {samples_file}")
        samples_hu = ps.read_tensor(samples_file).astype(np.float64) * HU_PER_UNIT
        results["sampling"] = roi_test_sampling(samples_hu, feature, reference, tau_hu).to_dict()
    if method in ("direct", "both"):
        mean_file = tag_dir / "mean_direct.bin"
        var_file = tag_dir / "variance_direct.bin"
        if not (mean_file.is_file() and var_file.is_file()):
            raise MissingRunError(f"no direct estimates under {tag_dir}")
        mean_hu = ps.read_tensor(mean_file).astype(np.float64) * HU_PER_UNIT
        var_hu2 = ps.read_tensor(var_file).astype(np.float64) * HU_PER_UNIT**2
        results["direct"] = roi_test_direct(mean_hu, var_hu2, feature, reference, tau_hu).to_dict()
    payload = {"tau_hu": tau_hu, "method": method, "results": results}
    if persist:
        out_dir = tag_dir / "roi_tests"
        out_dir.mkdir(parents=True, exist_ok=True)
        k = len(list(out_dir.glob("*.json")))
        (out_dir / f"test_{k:03d}.json").write_text(json.dumps(payload, indent=1))
    return payload


@main.command("oracle-check")
@click.option("--wgan-run", default=None)
@click.option("--ablation-run", default=None)
@click.option("--mean-run", default=None)
@click.option("--var-run", default=None)
@click.option("--skip-slow", is_flag=True, help="Skip the trained-critic W1 bridge.")
@click.pass_obj
@handle_errors
def cmd_oracle_check(root, wgan_run, ablation_run, mean_run, var_run, skip_slow):
    """Run the oracle comparison suite; prints PASS/FAIL per criterion."""
    from .acceptance import run_oracle_checks

    run_ids = {"wgan": wgan_run, "ablation": ablation_run, "mean": mean_run, "var": var_run}
    results = run_oracle_checks(root, run_ids, include_slow=not skip_slow)
    failed = 0
    for name, ok, detail in results:
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed += not ok
    if failed:
        click.echo(f"{failed} criterion(s) failed", err=True)
        sys.exit(EXIT_NUMERICAL)
    click.echo(f"all {len(results)} criteria passed")


@main.command("report")
@click.option("--run", "run_id", required=True)
@click.option("--tag", default="default")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--window", default="-150,200", show_default=True,
              help="Display window in HU: lo,hi.")
@click.pass_obj
@handle_errors
def cmd_report(root, run_id, tag, out_dir, window):
    """Render figures (mean, pstd, histograms) and summary.csv for a run."""
    from .report import render_run_report

    try:
        lo, hi = (float(v) for v in window.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad window {window!r}, expected 'lo,hi'") from exc
    run = _run_dir(root, run_id)
    out = render_run_report(run, out_dir, tag=tag, window_hu=(lo, hi))
    click.echo(json.dumps({"report_dir": str(out)}))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.pass_obj
def cmd_serve(root, host, port):
    """Serve completed runs over HTTP for the ROI explorer UI."""
    import uvicorn

    from .service import build_app

    uvicorn.run(build_app(root), host=host, port=port)


if __name__ == "__main__":
    main()
