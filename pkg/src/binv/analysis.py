"""Posterior sample statistics, ROI hypothesis tests, and a discrete
Wasserstein-1 utility.

The ROI test statistic is Delta = mean(reference) - mean(feature), so a dark
lesion gives Delta > 0.  The sampling path estimates p = Prob(Delta > tau)
as an empirical tail over generated samples; the direct path assumes
independent pixels and propagates the pointwise variances through the ROI
averages into a Normal law for Delta.  Under correlated posteriors the
independence assumption understates sigma_Delta, which is exactly what the
correlated-oracle tests document.

All functions here are unit-agnostic: Delta and tau are in whatever units the
images carry (callers working in scaled model units convert HU thresholds at
the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

EPS_MASS = 1e-8


# ---------------------------------------------------------------------------
# RLE masks (shared wire format for manifests, HTTP bodies, and the UI)
# ---------------------------------------------------------------------------

def encode_mask_rle(mask: np.ndarray) -> dict:
    """Row-major RLE: alternating run lengths starting with background."""
    mask = np.asarray(mask).astype(bool)
    flat = mask.ravel()
    counts = []
    current, run = False, 0
    for v in flat:
        if v == current:
            run += 1
        else:
            counts.append(run)
            current, run = v, 1
    counts.append(run)
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def decode_mask_rle(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    if sum(counts) != h * w:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos, value = 0, False
    for run in counts:
        if run < 0:
            raise ValueError("negative run length")
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(h, w)


def validate_rois(feature: np.ndarray, reference: np.ndarray, shape=None) -> None:
    if shape is not None and (feature.shape != shape or reference.shape != shape):
        raise ValueError("ROI masks do not match the image shape")
    if feature.shape != reference.shape:
        raise ValueError("ROI masks must share a shape")
    if not feature.any() or not reference.any():
        raise ValueError("ROIs must be nonempty")
    if (feature & reference).any():
        raise ValueError("feature and reference ROIs must be disjoint")


# ---------------------------------------------------------------------------
# sample statistics
# ---------------------------------------------------------------------------

def sample_mean(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ValueError("need a stack of at least one sample")
    return samples.mean(axis=0)


def sample_pstd(samples: np.ndarray) -> np.ndarray:
    """Per-pixel standard deviation with population (1/n) normalization."""
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[0] < 2:
        raise ValueError("pointwise std needs at least two samples")
    return samples.std(axis=0, ddof=0)


# ---------------------------------------------------------------------------
# ROI hypothesis tests
# ---------------------------------------------------------------------------

@dataclass
class RoiTestResult:
    method: str  # "sampling" | "direct"
    tau: float
    p_value: float
    mu_delta: float
    sigma_delta: float
    n_samples: int | None = None
    delta_samples: np.ndarray | None = None
    histogram: dict | None = None  # {"bin_edges": [...], "counts": [...]}
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "tau": self.tau,
            "p_value": self.p_value,
            "mu_delta": self.mu_delta,
            "sigma_delta": self.sigma_delta,
            "degenerate": self.degenerate,
        }
        if self.method == "sampling":
            d["n_samples"] = self.n_samples
            d["delta_samples"] = [float(v) for v in self.delta_samples]
            d["histogram"] = self.histogram
        return d


def delta_statistic(image: np.ndarray, roi_feature: np.ndarray, roi_reference: np.ndarray) -> float:
    """Mean over the reference ROI minus mean over the feature ROI."""
    validate_rois(roi_feature, roi_reference, np.asarray(image).shape)
    image = np.asarray(image, dtype=np.float64)
    return float(image[roi_reference].mean() - image[roi_feature].mean())


def roi_test_sampling(
    samples: np.ndarray,
    roi_feature: np.ndarray,
    roi_reference: np.ndarray,
    tau: float,
    n_bins: int = 40,
) -> RoiTestResult:
    """Empirical tail p = #{Delta_i > tau} / n over per-sample Delta values."""
    samples = np.asarray(samples, dtype=np.float64)
    validate_rois(roi_feature, roi_reference, samples.shape[1:])
    n = samples.shape[0]
    flat = samples.reshape(n, -1)
    deltas = flat[:, roi_reference.ravel()].mean(axis=1) - flat[:, roi_feature.ravel()].mean(axis=1)
    p = float((deltas > tau).sum() / n)
    counts, edges = np.histogram(deltas, bins=n_bins)
    return RoiTestResult(
        method="sampling",
        tau=float(tau),
        p_value=p,
        mu_delta=float(deltas.mean()),
        sigma_delta=float(deltas.std(ddof=0)),
        n_samples=n,
        delta_samples=deltas,
        histogram={"bin_edges": edges.tolist(), "counts": counts.tolist()},
    )


def roi_test_direct(
    mean_image: np.ndarray,
    variance_image: np.ndarray,
    roi_feature: np.ndarray,
    roi_reference: np.ndarray,
    tau: float,
) -> RoiTestResult:
    """Normal law for Delta under the independent-pixel assumption:
    sigma^2 = |R|^-2 sum_R var + |F|^-2 sum_F var; p = 1 - Phi((tau - mu)/sigma)."""
    variance_image = np.asarray(variance_image, dtype=np.float64)
    if np.any(variance_image < 0):
        raise ValueError("variance image must be nonnegative")
    validate_rois(roi_feature, roi_reference, variance_image.shape)
    mu = delta_statistic(mean_image, roi_feature, roi_reference)
    n_r, n_f = int(roi_reference.sum()), int(roi_feature.sum())
    var = variance_image[roi_reference].sum() / n_r**2 + variance_image[roi_feature].sum() / n_f**2
    sigma = float(np.sqrt(var))
    if sigma == 0.0:
        if mu == tau:
            return RoiTestResult("direct", float(tau), 0.5, mu, sigma, degenerate=True)
        return RoiTestResult("direct", float(tau), 1.0 if mu > tau else 0.0, mu, sigma,
                             degenerate=True)
    p = float(scipy.stats.norm.sf((tau - mu) / sigma))
    return RoiTestResult("direct", float(tau), p, mu, sigma)


def direct_sigma_delta(
    variance_image: np.ndarray, roi_feature: np.ndarray, roi_reference: np.ndarray
) -> float:
    """sigma_Delta under the independent-pixel assumption alone."""
    variance_image = np.asarray(variance_image, dtype=np.float64)
    n_r, n_f = int(roi_reference.sum()), int(roi_feature.sum())
    var = variance_image[roi_reference].sum() / n_r**2 + variance_image[roi_feature].sum() / n_f**2
    return float(np.sqrt(var))


def roi_weight_vector(roi_feature: np.ndarray, roi_reference: np.ndarray) -> np.ndarray:
    """Weights w with <w, x> = Delta(x); used against full oracle covariances."""
    validate_rois(roi_feature, roi_reference)
    w = np.zeros(roi_feature.shape, dtype=np.float64)
    w[roi_reference] = 1.0 / roi_reference.sum()
    w[roi_feature] = -1.0 / roi_feature.sum()
    return w


# ---------------------------------------------------------------------------
# discrete Wasserstein-1
# ---------------------------------------------------------------------------

def w1_discrete(p: np.ndarray, q: np.ndarray, grid: np.ndarray) -> float:
    """W1 between discrete distributions on a common sorted real grid via
    the CDF formula: sum |CDF_p - CDF_q| * dgrid."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if p.shape != grid.shape or q.shape != grid.shape:
        raise ValueError("p, q, grid must share a shape")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(p.sum() - 1.0) > EPS_MASS or abs(q.sum() - 1.0) > EPS_MASS:
        raise ValueError("p and q must each sum to 1")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    cdf_diff = np.abs(np.cumsum(p - q))[:-1]
    return float(np.sum(cdf_diff * np.diff(grid)))


# ---------------------------------------------------------------------------
# 1-D critic bridge: train a small critic under the adversarial objective and
# read off its Wasserstein estimate
# ---------------------------------------------------------------------------

@dataclass
class W1CriticResult:
    estimate: float
    history: list = field(default_factory=list)


def train_w1_critic(
    grid: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    steps: int = 1500,
    lr: float = 5e-3,
    lambda_gp: float = 50.0,
    batch: int = 128,
    seed: int = 0,
) -> W1CriticResult:
    """Maximize E_p[D] - E_q[D] with a gradient penalty on p/q interpolants;
    the converged objective approximates W1(p, q).

    In one dimension the two slope basins D' = +1 and D' = -1 favored by the
    penalty are disconnected, so a critic can start on the wrong side and stay
    there.  D and -D are equally 1-Lipschitz, so one early sign reflection
    (a no-cost ascent move within the function class) is applied if the
    objective is negative a tenth of the way in.
    """
    import torch

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    # leaky-relu: the optimal 1-Lipschitz critic is piecewise linear
    net = torch.nn.Sequential(
        torch.nn.Linear(1, 64), torch.nn.LeakyReLU(0.2),
        torch.nn.Linear(64, 64), torch.nn.LeakyReLU(0.2),
        torch.nn.Linear(64, 1),
    )
    opt = torch.optim.Adam(net.parameters(), lr=lr, betas=(0.5, 0.9))
    grid_t = torch.tensor(grid, dtype=torch.float32).reshape(-1, 1)
    p_t = torch.tensor(p, dtype=torch.float32)
    q_t = torch.tensor(q, dtype=torch.float32)
    history = []
    flip_checked = False
    for step in range(steps):
        if step == max(steps // 10, 1) and not flip_checked:
            flip_checked = True
            with torch.no_grad():
                vals = net(grid_t).squeeze(1)
                if float((vals * p_t).sum() - (vals * q_t).sum()) < 0:
                    final = net[-1]
                    final.weight.neg_()
                    final.bias.neg_()
        set_lr = lr * 0.5 * (1.0 + np.cos(np.pi * step / steps))
        for group in opt.param_groups:
            group["lr"] = set_lr
        xs = torch.tensor(
            rng.choice(grid, size=batch, p=p), dtype=torch.float32
        ).reshape(-1, 1)
        ys = torch.tensor(
            rng.choice(grid, size=batch, p=q), dtype=torch.float32
        ).reshape(-1, 1)
        eps = torch.rand(batch, 1)
        mid = (eps * xs + (1 - eps) * ys).requires_grad_(True)
        opt.zero_grad()
        obj = (net(grid_t).squeeze(1) * p_t).sum() - (net(grid_t).squeeze(1) * q_t).sum()
        (grad,) = torch.autograd.grad(net(mid).sum(), mid, create_graph=True)
        gp = ((grad.abs().squeeze(1) - 1.0) ** 2).mean()
        loss = -obj + lambda_gp * gp
        loss.backward()
        opt.step()
        history.append(float(obj.item()))
    with torch.no_grad():
        vals = net(grid_t).squeeze(1)
        estimate = float((vals * p_t).sum() - (vals * q_t).sum())
    return W1CriticResult(estimate=estimate, history=history)
