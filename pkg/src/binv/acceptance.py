"""The oracle-equivalence acceptance suite.

Defines the canonical desk-scale validation problem (a 32^2 Gaussian-linear
model with a circulant prior, solvable in closed form) plus every acceptance
criterion as a function returning (name, passed, detail).  The CLI's
oracle-check command and the pytest acceptance module both run these, so the
gate is identical everywhere.

Criteria that need trained networks evaluate existing run directories; the
pytest module trains them with the configs from :func:`acceptance_train_setup`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.stats
import torch

from . import HU_PER_UNIT
from . import analysis as an
from . import direct_estimation as de
from . import forward_models as fm
from . import networks as nets
from . import oracle as oc
from . import priors as pr
from . import wgan_training as wt

ACCEPT_SIZE = 32
ACCEPT_PRIOR_STD_HU = 40.0
ACCEPT_NOISE_STD_HU = 12.0
ACCEPT_LESION_CONTRAST_HU = 30.0
ACCEPT_TAU_HU = 10.0
ACCEPT_DATASET_SEED = 11
ACCEPT_DATASET_N = 384
HELD_OUT_SEED = 999
LESION_OBS_SEED = 7


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def as_tuple(self):
        return (self.name, self.passed, self.detail)


def acceptance_model() -> oc.GaussianLinearModel:
    n = ACCEPT_SIZE
    mu0 = pr.make_phantom("organ", n, seed=2024).image / HU_PER_UNIT
    dens = 1.0 / (pr.laplacian_eigenvalues(n) + 0.3) ** 2
    dens *= (ACCEPT_PRIOR_STD_HU / HU_PER_UNIT) ** 2 / dens.mean()
    return oc.GaussianLinearModel(
        operator=fm.make_operator("identity", {"image_size": n}),
        prior_mean=mu0,
        prior_spectral_density=dens,
        noise_variance=(ACCEPT_NOISE_STD_HU / HU_PER_UNIT) ** 2,
    )


def acceptance_dataset() -> pr.Dataset:
    return oc.make_gaussian_dataset(acceptance_model(), ACCEPT_DATASET_N,
                                    seed=ACCEPT_DATASET_SEED)


def acceptance_rois():
    n = ACCEPT_SIZE
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    r2 = (ii - 16) ** 2 + (jj - 18) ** 2
    feature = r2 <= 3.0**2
    reference = (r2 > 4.5**2) & (r2 <= 7.0**2)
    return feature, reference


def held_out_observations(n_held: int = 10):
    """Frozen held-out (x, y) pairs used by every trained-run criterion."""
    m = acceptance_model()
    out = []
    for k in range(n_held):
        ss = np.random.SeedSequence([HELD_OUT_SEED, k]).generate_state(2)
        x = oc.sample_prior(m, int(ss[0]))
        y = oc.simulate_observation(m, x, int(ss[1])).astype(np.float32)
        out.append((x, y))
    return m, out


def lesion_observation(contrast_hu: float):
    m = acceptance_model()
    feature, reference = acceptance_rois()
    x_true = np.array(m.prior_mean, copy=True)
    x_true[feature] -= contrast_hu / HU_PER_UNIT
    y = oc.simulate_observation(m, x_true, seed=LESION_OBS_SEED).astype(np.float32)
    return m, x_true, y


def acceptance_train_setup() -> dict:
    """Network and optimizer settings for the acceptance training runs.

    The learning-rate noise term is disabled and the base rate raised to
    4e-4: the default noise magnitude is calibrated for horizons two orders
    of magnitude longer than these desk-scale runs and stalls them.
    """
    net = dict(image_size=ACCEPT_SIZE, base_channels=16, n_scales=2, fc_width=64)
    return {
        "gen": nets.NetConfig(**net),
        "disc": nets.NetConfig(**net),
        "estimator": nets.NetConfig(**net),
        "wgan": wt.TrainConfig(
            steps=900, batch_size=8, seed=5, lr0=4e-4, lr_initial_variance=0.0,
            checkpoint_every=150,
        ),
        "direct": wt.TrainConfig(
            steps=1500, batch_size=16, seed=6, lr0=1e-3, lr_initial_variance=0.0,
        ),
    }


# ---------------------------------------------------------------------------
# fast criteria (no trained runs needed)
# ---------------------------------------------------------------------------

def check_forward_model_suite() -> CheckResult:
    details = []
    ok = True
    # adjoint defect for every operator kind
    geom = fm.Geometry(12, 20, 14)
    ops = [
        fm.make_operator("identity", {"image_size": 14}),
        fm.make_operator("blur", {"image_size": 14, "sigma_px": 1.2}),
        fm.make_operator("radon", {"geometry": geom}),
    ]
    worst = 0.0
    for op in ops:
        rng = np.random.default_rng(1)
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        ax = op.forward(x)
        defect = abs(np.vdot(ax, y) - np.vdot(x, op.adjoint(y)))
        rel = defect / (np.linalg.norm(ax) * np.linalg.norm(y) + 1e-300)
        worst = max(worst, rel)
    ok &= worst <= 1e-4
    details.append(f"adjoint defect {worst:.2e}")

    # impulse sinogram vs exact clipping oracle
    def clip_len(theta, s, x0, x1, y0, y1):
        ox, oy = s * np.cos(theta), s * np.sin(theta)
        ux, uy = -np.sin(theta), np.cos(theta)
        t_lo, t_hi = -np.inf, np.inf
        for o, u, lo, hi in ((ox, ux, x0, x1), (oy, uy, y0, y1)):
            if abs(u) < 1e-14:
                if not lo <= o <= hi:
                    return 0.0
            else:
                ta, tb = (lo - o) / u, (hi - o) / u
                t_lo, t_hi = max(t_lo, min(ta, tb)), min(t_hi, max(ta, tb))
        return max(0.0, t_hi - t_lo)

    geom = fm.Geometry(10, 18, 12)
    img = np.zeros(geom.image_shape)
    i, j = 7, 4
    img[i, j] = 1.0
    sino = fm.radon_forward(img, geom)
    px, half = geom.pixel_size, geom.fov / 2
    worst_imp = 0.0
    for a, theta in enumerate(geom.angles):
        for d, s in enumerate(geom.detector_offsets):
            expect = clip_len(theta, s, -half + j * px, -half + (j + 1) * px,
                              -half + i * px, -half + (i + 1) * px)
            worst_imp = max(worst_imp, abs(sino[a, d] - expect))
    ok &= worst_imp <= 1e-3 * geom.fov
    details.append(f"impulse vs clipping {worst_imp:.2e}")

    # transmission-noise Monte Carlo moments
    nm = fm.NoiseModel(photons_per_pixel=1e4)
    value = 0.2 / nm.mu_scale
    draws = np.array(
        [fm.apply_dose_noise(np.full((1, 1), value), nm, rng_seed=5000 + k)[0, 0]
         for k in range(8000)]
    )
    lam = nm.photons_per_pixel * np.exp(-0.2)
    se_mean = (1.0 / (nm.mu_scale * np.sqrt(lam))) / np.sqrt(draws.size)
    mean_ok = abs(draws.mean() - value) <= 3 * se_mean
    var_expected = 1.0 / (lam * nm.mu_scale**2)
    var_ok = abs(draws.var() - var_expected) <= 3 * var_expected * np.sqrt(2 / draws.size)
    ok &= mean_ok and var_ok
    details.append(f"noise MC mean within {abs(draws.mean()-value)/se_mean:.2f} SE")
    return CheckResult("forward-model suite", bool(ok), "; ".join(details))


def check_gibbs_prior_suite() -> CheckResult:
    details = []
    ok = True
    # finite-difference gradients for every kind
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8, 8))
    h = 1e-4
    worst = 0.0
    for kind in pr.PRIOR_KINDS:
        p = pr.GibbsPrior(kind=kind, weight=0.9)
        g = pr.gibbs_energy_grad(x, p)
        fd = np.zeros_like(x)
        for i in range(8):
            for j in range(8):
                e = np.zeros_like(x)
                e[i, j] = h
                fd[i, j] = (pr.gibbs_energy(x + e, p) - pr.gibbs_energy(x - e, p)) / (2 * h)
        rel = np.max(np.abs(g - fd)) / (1.0 + np.max(np.abs(g)))
        worst = max(worst, rel)
        ok &= rel <= 1e-4
    details.append(f"grad FD worst {worst:.1e}")

    # l2 chain: KS of pixel marginals against the exact Gaussian law
    lam = 2.0
    res = pr.mala_chain(pr.GibbsPrior("l2", weight=lam), image_size=8, n_steps=9000,
                        step_size=0.3, burn_in=1000, seed=5, thin=25)
    values = res.samples.reshape(-1)
    ks = scipy.stats.kstest(values, "norm", args=(0.0, np.sqrt(1.0 / (2 * lam))))
    ok &= ks.pvalue > 0.01
    details.append(f"l2 KS p={ks.pvalue:.3f}")

    # grad_l2 chain: spectrum against the exact circulant sampler
    n, lam = 16, 1.0
    ell = pr.laplacian_eigenvalues(n)
    nz = ell > 1e-12
    dens = np.zeros_like(ell)
    dens[nz] = 1.0 / (2.0 * lam * ell[nz])
    res = pr.mala_chain(pr.GibbsPrior("grad_l2", weight=lam), image_size=n,
                        n_steps=26000, step_size=0.05, burn_in=2000, seed=7, thin=150)
    mala_p = np.mean([np.abs(np.fft.fft2(s, norm="ortho")) ** 2 for s in res.samples], axis=0)
    exact = [pr.sample_gaussian_field(dens, n, seed=k) for k in range(len(res.samples))]
    exact_p = np.mean([np.abs(np.fft.fft2(s, norm="ortho")) ** 2 for s in exact], axis=0)
    bins = np.quantile(ell[nz], [0, 0.25, 0.5, 0.75, 1.0])
    spec_ok = True
    for lo, hi in zip(bins[:-1], bins[1:]):
        sel = nz & (ell >= lo) & (ell <= hi)
        se = (mala_p[sel].mean() + exact_p[sel].mean()) / np.sqrt(sel.sum() * len(res.samples))
        spec_ok &= abs(mala_p[sel].mean() - exact_p[sel].mean()) <= 5 * se
    ok &= spec_ok
    details.append(f"grad_l2 spectrum {'ok' if spec_ok else 'off'}; "
                   f"acceptance {res.acceptance_rate:.2f}")
    return CheckResult("Gibbs prior suite", bool(ok), "; ".join(details))


def check_prop1_tabular() -> CheckResult:
    from scipy.optimize import minimize_scalar

    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(20):
        nx, ny = rng.integers(2, 7), rng.integers(2, 7)
        x_values = np.sort(rng.uniform(-5, 5, size=nx))
        joint = rng.uniform(0.01, 1.0, size=(nx, ny))
        table, _ = oc.tabular_conditional_mean(x_values, joint)
        p = joint / joint.sum()
        argmin = np.zeros(ny)
        for j in range(ny):
            res = minimize_scalar(
                lambda v: float(np.sum(p[:, j] * (v - x_values) ** 2)),
                bounds=(x_values.min() - 1, x_values.max() + 1),
                method="bounded", options={"xatol": 1e-10},
            )
            argmin[j] = res.x
        worst = max(worst, float(np.max(np.abs(table - argmin))))
    return CheckResult("Prop-1 tabular oracle", worst <= 1e-6,
                       f"worst |formula - argmin| = {worst:.2e} over 20 tables")


def _w1_lp(p, q, grid):
    import scipy.optimize

    n = len(grid)
    cost = np.abs(grid[:, None] - grid[None, :]).ravel()
    a_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
    res = scipy.optimize.linprog(cost, A_eq=np.array(a_eq),
                                 b_eq=np.concatenate([p, q]), bounds=(0, None),
                                 method="highs")
    return res.fun


def check_w1_utility(include_critic: bool = True) -> CheckResult:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 11))
        grid = np.sort(rng.uniform(-3, 3, size=n))
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        worst = max(worst, abs(an.w1_discrete(p, q, grid) - _w1_lp(p, q, grid)))
    ok = worst <= 1e-8
    detail = f"CDF vs LP worst {worst:.2e} over 50 pairs"
    if include_critic:
        grid = np.linspace(-2.0, 2.0, 16)
        p = np.exp(-((grid + 0.8) ** 2) / 0.3)
        p /= p.sum()
        q = np.exp(-((grid - 0.8) ** 2) / 0.5)
        q /= q.sum()
        true = an.w1_discrete(p, q, grid)
        est = an.train_w1_critic(grid, p, q, steps=1500, seed=0).estimate
        rel = abs(est - true) / true
        ok = ok and rel <= 0.10
        detail += f"; critic rel err {rel:.3f}"
    return CheckResult("W1 utility", bool(ok), detail)


def check_loss_exactness() -> CheckResult:
    torch.manual_seed(20)
    cfg = nets.NetConfig(image_size=4, base_channels=4, n_scales=0, fc_width=8,
                         use_batchnorm=False, zero_init_head=False)
    gen = nets.build_generator(cfg, seed=20)
    disc = nets.build_discriminator(cfg, seed=21)
    gen.module.double().eval()
    disc.module.double().eval()
    x = torch.randn(3, 1, 4, 4, dtype=torch.float64)
    y = torch.randn(3, 1, 4, 4, dtype=torch.float64)
    batch = wt.make_wgan_batch(x, y)

    # scalar per-item re-evaluation of the same formulas
    def scalar_core():
        total = 0.0
        for i in range(3):
            xi, yi = batch.x[i:i+1], batch.y[i:i+1]
            with torch.no_grad():
                g1 = gen(batch.z1[i:i+1], yi)
                g2 = gen(batch.z2[i:i+1], yi)
                mixed = 0.5 * (disc(xi, g1, yi).item() + disc(g1, xi, yi).item())
                total += mixed - disc(g1, g2, yi).item()
        return total / 3

    def fd_grad(u1, u2, yi, h=1e-6):
        grads = []
        for u in (u1, u2):
            g = torch.zeros_like(u)
            flat = u.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + h
                fp = disc(u1, u2, yi).item()
                flat[k] = orig - h
                fm_ = disc(u1, u2, yi).item()
                flat[k] = orig
                g.view(-1)[k] = (fp - fm_) / (2 * h)
            grads.append(g)
        return grads

    def scalar_gp():
        total = 0.0
        for i in range(3):
            xi, yi = batch.x[i:i+1], batch.y[i:i+1]
            e = batch.eps[i].item()
            with torch.no_grad():
                g1 = gen(batch.z1[i:i+1], yi)
                g2 = gen(batch.z2[i:i+1], yi)
                d1 = fd_grad((e * xi + (1 - e) * g1).clone(),
                             (e * g1 + (1 - e) * g2).clone(), yi)
                d2 = fd_grad((e * g1 + (1 - e) * g1).clone(),
                             (e * xi + (1 - e) * g2).clone(), yi)
                gamma = [0.5 * (d1[0] + d2[0]), 0.5 * (d1[1] + d2[1])]
                norm = float(torch.sqrt(gamma[0].square().sum() + gamma[1].square().sum()))
                total += (norm - 1.0) ** 2
        return total / 3

    def scalar_drift():
        return float(np.mean([disc(batch.x[i:i+1], batch.x[i:i+1], batch.y[i:i+1]).item() ** 2
                              for i in range(3)]))

    core_err = abs(wt.wgan_core_loss(batch, gen, disc).item() - scalar_core())
    gp_err = abs(wt.gradient_penalty(batch, gen, disc).item() - scalar_gp())
    drift_err = abs(wt.drift_penalty(batch, disc).item() - scalar_drift())
    exact_ok = core_err <= 1e-6 and gp_err <= 1e-6 and drift_err <= 1e-6

    # closed-form identities
    class Fn:
        def __init__(self, fn):
            self.fn = fn

        def __call__(self, *a):
            return self.fn(*a)

    const = Fn(lambda a, b, c: torch.full((a.shape[0],), 2.2, dtype=a.dtype))
    u = torch.randn(1, 1, 4, 4, dtype=torch.float64)
    u /= torch.sqrt(u.square().sum())
    lin = Fn(lambda a, b, c: (a * u).flatten(1).sum(dim=1))
    ident_ok = (
        abs(wt.wgan_core_loss(batch, gen, const).item()) <= 1e-12
        and abs(wt.gradient_penalty(batch, gen, lin).item()) <= 1e-10
        and abs(wt.gradient_penalty(batch, gen, Fn(
            lambda a, b, c: torch.zeros(a.shape[0], dtype=a.dtype))).item() - 1.0) <= 1e-10
    )

    # parameter gradients vs finite differences
    cfg_t = wt.TrainConfig(steps=1, batch_size=3, seed=0)
    loss = wt.discriminator_loss(batch, gen, disc, cfg_t)[0]
    params = [p for p in disc.module.parameters()]
    grads = torch.autograd.grad(loss, params)
    gmax = max(g.abs().max().item() for g in grads)
    rng = np.random.default_rng(0)
    worst_rel = 0.0
    checked = 0
    for p, g in zip(params, grads):
        flat, gflat = p.data.view(-1), g.view(-1)
        for k in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
            orig = flat[k].item()
            flat[k] = orig + 1e-5
            fp = wt.discriminator_loss(batch, gen, disc, cfg_t)[0].item()
            flat[k] = orig - 1e-5
            fm_ = wt.discriminator_loss(batch, gen, disc, cfg_t)[0].item()
            flat[k] = orig
            worst_rel = max(worst_rel, abs((fp - fm_) / 2e-5 - gflat[k].item()) / gmax)
            checked += 1
            if checked >= 40:
                break
        if checked >= 40:
            break
    grad_ok = worst_rel <= 1e-3
    ok = exact_ok and ident_ok and grad_ok
    return CheckResult(
        "loss-function exactness", bool(ok),
        f"scalar errs core {core_err:.1e} gp {gp_err:.1e} drift {drift_err:.1e}; "
        f"identities {'ok' if ident_ok else 'off'}; grad FD worst {worst_rel:.1e}",
    )


def check_reproducibility() -> CheckResult:
    model = oc.GaussianLinearModel(
        operator=fm.make_operator("identity", {"image_size": 8}),
        prior_mean=np.zeros((8, 8)),
        prior_spectral_density=np.full((8, 8), 0.04**2),
        noise_variance=0.012**2,
    )
    ds1 = oc.make_gaussian_dataset(model, 8, seed=3)
    ds2 = oc.make_gaussian_dataset(model, 8, seed=3)
    fp_ok = ds1.fingerprint == ds2.fingerprint

    import tempfile

    from .train_common import load_loss_curves

    cfg = nets.NetConfig(image_size=8, base_channels=8, n_scales=1, fc_width=16)
    tcfg = wt.TrainConfig(steps=2, batch_size=4, seed=9)
    with tempfile.TemporaryDirectory() as tmp:
        r1 = wt.train_wgan(ds1, cfg, cfg, tcfg, tmp, run_id="a")
        r2 = wt.train_wgan(ds1, cfg, cfg, tcfg, tmp, run_id="b")
        c1, c2 = load_loss_curves(r1), load_loss_curves(r2)
        curves_ok = all(np.array_equal(c1[k], c2[k]) for k in c1)
        s1 = wt.sample_posterior(r1, ds1.pairs[0].y, n=5, seed=4, tag="x")
        s2 = wt.sample_posterior(r1, ds1.pairs[0].y, n=5, seed=4, tag="y")
        samples_ok = np.array_equal(s1, s2)
    ok = fp_ok and curves_ok and samples_ok
    return CheckResult(
        "reproducibility", bool(ok),
        f"fingerprints {'==' if fp_ok else '!='}; loss curves "
        f"{'bit-identical' if curves_ok else 'diverged'}; samples "
        f"{'bit-identical' if samples_ok else 'diverged'}",
    )


# ---------------------------------------------------------------------------
# trained-run criteria
# ---------------------------------------------------------------------------

def evaluate_wgan_against_oracle(run_dir: str | Path, n_samples: int = 1000,
                                 n_held: int = 10) -> dict:
    model, held = held_out_observations(n_held)
    prior_std = np.sqrt(model.prior_pointwise_variance)
    rmse, pstd_rel, mean_images = [], [], []
    for k, (x, y) in enumerate(held):
        mom = oc.gaussian_posterior_moments(model, y, keep_covariance=False)
        samples = wt.sample_posterior(run_dir, y, n=n_samples, seed=2000 + k,
                                      tag=f"accept{k}")
        sm = an.sample_mean(samples)
        sp = an.sample_pstd(samples)
        rmse.append(float(np.sqrt(np.mean((sm - mom.mean) ** 2)) / prior_std))
        target = np.sqrt(mom.pointwise_variance)
        pstd_rel.append(float(np.median(np.abs(sp - target) / target)))
        mean_images.append(sm)
    return {
        "mean_rmse_frac": rmse,
        "pstd_rel": pstd_rel,
        "median_mean_rmse_frac": float(np.median(rmse)),
        "median_pstd_rel": float(np.median(pstd_rel)),
        "mean_images": mean_images,
    }


def check_wgan_mean(run_dir: str | Path, stats: dict | None = None) -> CheckResult:
    stats = stats or evaluate_wgan_against_oracle(run_dir)
    v = stats["median_mean_rmse_frac"]
    return CheckResult("oracle posterior-mean agreement (WGAN)", v <= 0.15,
                       f"median RMSE = {v:.3f} of prior std (bound 0.15)")


def check_wgan_pstd(run_dir: str | Path, stats: dict | None = None) -> CheckResult:
    stats = stats or evaluate_wgan_against_oracle(run_dir)
    v = stats["median_pstd_rel"]
    return CheckResult("oracle pointwise-std agreement (WGAN)", v <= 0.35,
                       f"median relative pstd error = {v:.3f} (bound 0.35)")


def check_direct_estimation(mean_run: str | Path, var_run: str | Path,
                            wgan_stats: dict | None = None) -> CheckResult:
    model, held = held_out_observations()
    prior_std = np.sqrt(model.prior_pointwise_variance)
    rmse, var_rel, cross = [], [], []
    for k, (x, y) in enumerate(held):
        mom = oc.gaussian_posterior_moments(model, y, keep_covariance=False)
        pm = de.predict_mean(mean_run, y)
        pv = de.predict_variance(var_run, y)
        rmse.append(float(np.sqrt(np.mean((pm - mom.mean) ** 2)) / prior_std))
        var_rel.append(float(np.median(
            np.abs(pv - mom.pointwise_variance) / mom.pointwise_variance)))
        if wgan_stats is not None:
            cross.append(float(np.sqrt(np.mean(
                (pm - wgan_stats["mean_images"][k]) ** 2)) / prior_std))
    mean_ok = float(np.median(rmse)) <= 0.15
    var_ok = float(np.median(var_rel)) <= 0.30
    cross_ok = (float(np.median(cross)) <= 0.20) if cross else True
    detail = (f"mean RMSE {np.median(rmse):.3f} (<=0.15); "
              f"variance rel {np.median(var_rel):.3f} (<=0.30)")
    if cross:
        detail += f"; cross-method mean RMSE {np.median(cross):.3f} (<=0.20)"
    return CheckResult("direct estimation oracle agreement",
                       bool(mean_ok and var_ok and cross_ok), detail)


def check_mode_collapse_ablation(paired_run: str | Path, ablation_run: str | Path,
                                 n_samples: int = 200) -> CheckResult:
    model, held = held_out_observations(5)
    ratios = []
    for k, (x, y) in enumerate(held):
        sp = an.sample_pstd(wt.sample_posterior(paired_run, y, n=n_samples,
                                                seed=4000 + k, tag=f"mc{k}"))
        sa = an.sample_pstd(wt.sample_posterior(ablation_run, y, n=n_samples,
                                                seed=4000 + k, tag=f"mc{k}"))
        ratios.append(float(sa.mean() / sp.mean()))
    v = float(np.median(ratios))
    return CheckResult("mode-collapse ablation", v < 0.30,
                       f"ablation/paired mean pstd ratio = {v:.3f} (bound < 0.30)")


def check_hypothesis_test(paired_run: str | Path, n_samples: int = 1000) -> CheckResult:
    feature, reference = acceptance_rois()
    w = an.roi_weight_vector(feature, reference)
    details = []
    ok = True

    model, x_true, y = lesion_observation(ACCEPT_LESION_CONTRAST_HU)
    mu_d, sd_d = oc.linear_functional_posterior(model, y, w)
    tau_units = ACCEPT_TAU_HU / HU_PER_UNIT
    p_oracle = float(scipy.stats.norm.sf((tau_units - mu_d) / sd_d))
    ok &= p_oracle > 0.99
    samples = wt.sample_posterior(paired_run, y, n=n_samples, seed=777, tag="lesion")
    res = an.roi_test_sampling(samples * HU_PER_UNIT, feature, reference,
                               tau=ACCEPT_TAU_HU)
    ok &= res.p_value > 0.95
    details.append(f"lesion: oracle p={p_oracle:.4f} (>0.99), sampling p={res.p_value:.3f} (>0.95)")

    model0, x0, y0 = lesion_observation(0.0)
    samples0 = wt.sample_posterior(paired_run, y0, n=n_samples, seed=778, tag="contrast0")
    res0 = an.roi_test_sampling(samples0 * HU_PER_UNIT, feature, reference,
                                tau=ACCEPT_TAU_HU)
    ok &= 0.0 <= res0.p_value <= 0.5
    details.append(f"contrast-0: sampling p={res0.p_value:.3f} (in [0, 0.5])")

    # independence assumption strictly understates sigma_Delta under the
    # oracle's correlated posterior
    mom = oc.gaussian_posterior_moments(model, y, keep_covariance=True)
    true_sigma = float(np.sqrt(w.ravel() @ mom.covariance @ w.ravel()))
    ind_sigma = an.direct_sigma_delta(mom.pointwise_variance, feature, reference)
    ok &= ind_sigma < true_sigma
    details.append(f"sigma_D independent {ind_sigma*1000:.2f} < true {true_sigma*1000:.2f} HU")
    return CheckResult("hypothesis-test recovery", bool(ok), "; ".join(details))


# ---------------------------------------------------------------------------
# suite runner
# ---------------------------------------------------------------------------

def run_oracle_checks(runs_root: str | Path, run_ids: dict | None = None,
                      include_slow: bool = True) -> list:
    """All criteria runnable now: always the analytic checks, plus trained-run
    criteria for whichever run ids are provided."""
    results = [
        check_forward_model_suite(),
        check_gibbs_prior_suite(),
        check_prop1_tabular(),
        check_w1_utility(include_critic=include_slow),
        check_loss_exactness(),
        check_reproducibility(),
    ]
    run_ids = {k: v for k, v in (run_ids or {}).items() if v}
    root = Path(runs_root)
    wgan_stats = None
    if "wgan" in run_ids:
        wgan_dir = root / run_ids["wgan"]
        wgan_stats = evaluate_wgan_against_oracle(wgan_dir)
        results.append(check_wgan_mean(wgan_dir, wgan_stats))
        results.append(check_wgan_pstd(wgan_dir, wgan_stats))
        results.append(check_hypothesis_test(wgan_dir))
        if "ablation" in run_ids:
            results.append(check_mode_collapse_ablation(wgan_dir, root / run_ids["ablation"]))
    if "mean" in run_ids and "var" in run_ids:
        results.append(check_direct_estimation(root / run_ids["mean"],
                                               root / run_ids["var"], wgan_stats))
    return [r.as_tuple() for r in results]
