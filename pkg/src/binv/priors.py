"""Handcrafted Gibbs priors, phantom generators, and supervised-pair datasets.

Energies are of the form lambda * S(x) with S >= 0 and S(0) = 0, using
periodic boundaries throughout so that gradient and Laplacian operators are
exactly diagonal in the Fourier basis (which the spectral oracle exploits).

Besov energies use an orthonormal periodic Daubechies wavelet transform with
``order`` vanishing moments (order 1 for smoothness 1, order 2 for
smoothness 2).  With L decomposition levels, detail bands are indexed
j = 0 (coarsest) .. L-1 (finest) and weighted 2^(j*(s-1)); the coarsest
approximation band carries weight 1.  This convention is what all tests
assert against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.ndimage

from . import HU_PER_UNIT
from .forward_models import LinearOperator, NoiseModel, apply_dose_noise, fbp_reconstruct
from .persistence import fingerprint_tensors

PRIOR_KINDS = ("l2", "grad_l2", "laplacian_l2", "tv", "besov_1_1_1", "besov_1_1_2")


@dataclass(frozen=True)
class GibbsPrior:
    kind: str
    weight: float = 1.0
    tv_smoothing: float = 1e-2
    wavelet_levels: int = 3

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.weight <= 0:
            raise ValueError("weight must be > 0")
        if self.kind == "tv" and self.tv_smoothing <= 0:
            raise ValueError("tv_smoothing must be > 0")

    @property
    def wavelet_order(self) -> int:
        return {"besov_1_1_1": 1, "besov_1_1_2": 2}[self.kind]

    @property
    def besov_smoothness(self) -> int:
        return {"besov_1_1_1": 1, "besov_1_1_2": 2}[self.kind]


# ---------------------------------------------------------------------------
# periodic difference operators
# ---------------------------------------------------------------------------

def _fwd_diff(x, axis):
    return np.roll(x, -1, axis=axis) - x


def _fwd_diff_adj(g, axis):
    # adjoint of the periodic forward difference
    return np.roll(g, 1, axis=axis) - g


def _laplacian(x):
    return (
        np.roll(x, 1, 0) + np.roll(x, -1, 0) + np.roll(x, 1, 1) + np.roll(x, -1, 1) - 4 * x
    )


def laplacian_eigenvalues(n: int) -> np.ndarray:
    """Eigenvalues of -Laplacian on the periodic n x n grid, fft2 layout."""
    k = 2 * np.pi * np.fft.fftfreq(n)
    lx = 2.0 - 2.0 * np.cos(k)
    return lx[:, None] + lx[None, :]


# ---------------------------------------------------------------------------
# orthonormal periodic Daubechies wavelets
# ---------------------------------------------------------------------------

_DB_LOWPASS = {
    1: np.array([1.0, 1.0]) / np.sqrt(2.0),
    2: np.array([1 + np.sqrt(3), 3 + np.sqrt(3), 3 - np.sqrt(3), 1 - np.sqrt(3)])
    / (4 * np.sqrt(2.0)),
}


def _qmf(h):
    g = h[::-1].copy()
    g[1::2] *= -1
    return g


def _dwt1(x, h, g, axis):
    n = x.shape[axis]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(h))[None, :]) % n
    moved = np.moveaxis(x, axis, 0)
    windows = moved[idx]  # (n//2, len(h), ...)
    a = np.tensordot(h, np.moveaxis(windows, 1, 0), axes=(0, 0))
    d = np.tensordot(g, np.moveaxis(windows, 1, 0), axes=(0, 0))
    return np.moveaxis(a, 0, axis), np.moveaxis(d, 0, axis)


def _idwt1(a, d, h, g, axis):
    n = 2 * a.shape[axis]
    a_m = np.moveaxis(a, axis, 0)
    d_m = np.moveaxis(d, axis, 0)
    out = np.zeros((n,) + a_m.shape[1:])
    for m in range(len(h)):
        target = (2 * np.arange(n // 2) + m) % n
        np.add.at(out, target, h[m] * a_m + g[m] * d_m)
    return np.moveaxis(out, 0, axis)


def wavelet_analysis(x: np.ndarray, order: int, levels: int):
    """Separable 2-D periodic DWT; returns (approx, [(dh, dv, dd) fine->coarse])."""
    h = _DB_LOWPASS[order]
    g = _qmf(h)
    a = np.asarray(x, dtype=np.float64)
    details = []
    for _ in range(levels):
        if a.shape[0] % 2 or a.shape[1] % 2:
            raise ValueError("image size must be divisible by 2^levels")
        lo0, hi0 = _dwt1(a, h, g, axis=0)
        ll, lh = _dwt1(lo0, h, g, axis=1)
        hl, hh = _dwt1(hi0, h, g, axis=1)
        details.append((lh, hl, hh))
        a = ll
    return a, details


def wavelet_synthesis(approx: np.ndarray, details, order: int) -> np.ndarray:
    h = _DB_LOWPASS[order]
    g = _qmf(h)
    a = approx
    for lh, hl, hh in reversed(details):
        lo0 = _idwt1(a, lh, h, g, axis=1)
        hi0 = _idwt1(hl, hh, h, g, axis=1)
        a = _idwt1(lo0, hi0, h, g, axis=0)
    return a


def _besov_weights(prior: GibbsPrior, levels: int):
    # detail level produced first is the finest: j = levels-1 down to 0
    s = prior.besov_smoothness
    return [2.0 ** (j * (s - 1)) for j in range(levels - 1, -1, -1)]


# ---------------------------------------------------------------------------
# energies and gradients
# ---------------------------------------------------------------------------

def gibbs_energy(image: np.ndarray, prior: GibbsPrior) -> float:
    """lambda * S(image) for the configured prior kind."""
    x = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    lam = prior.weight
    if prior.kind == "l2":
        return lam * float(np.sum(x**2))
    if prior.kind == "grad_l2":
        return lam * float(np.sum(_fwd_diff(x, 0) ** 2 + _fwd_diff(x, 1) ** 2))
    if prior.kind == "laplacian_l2":
        return lam * float(np.sum(_laplacian(x) ** 2))
    if prior.kind == "tv":
        eps = prior.tv_smoothing
        mag = np.sqrt(_fwd_diff(x, 0) ** 2 + _fwd_diff(x, 1) ** 2 + eps**2) - eps
        return lam * float(np.sum(mag))
    # besov
    approx, details = wavelet_analysis(x, prior.wavelet_order, prior.wavelet_levels)
    weights = _besov_weights(prior, len(details))
    total = float(np.sum(np.abs(approx)))  # coarsest band, weight 1
    for (lh, hl, hh), w in zip(details, weights):
        total += w * float(np.sum(np.abs(lh)) + np.sum(np.abs(hl)) + np.sum(np.abs(hh)))
    return lam * total


def gibbs_energy_grad(image: np.ndarray, prior: GibbsPrior) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    lam = prior.weight
    if prior.kind == "l2":
        return 2.0 * lam * x
    if prior.kind == "grad_l2":
        return 2.0 * lam * (
            _fwd_diff_adj(_fwd_diff(x, 0), 0) + _fwd_diff_adj(_fwd_diff(x, 1), 1)
        )
    if prior.kind == "laplacian_l2":
        return 2.0 * lam * _laplacian(_laplacian(x))
    if prior.kind == "tv":
        eps = prior.tv_smoothing
        dx, dy = _fwd_diff(x, 0), _fwd_diff(x, 1)
        mag = np.sqrt(dx**2 + dy**2 + eps**2)
        return lam * (_fwd_diff_adj(dx / mag, 0) + _fwd_diff_adj(dy / mag, 1))
    approx, details = wavelet_analysis(x, prior.wavelet_order, prior.wavelet_levels)
    weights = _besov_weights(prior, len(details))
    g_approx = np.sign(approx)
    g_details = [
        (w * np.sign(lh), w * np.sign(hl), w * np.sign(hh))
        for (lh, hl, hh), w in zip(details, weights)
    ]
    return lam * wavelet_synthesis(g_approx, g_details, prior.wavelet_order)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_gaussian_field(spectral_density: np.ndarray, image_size: int, seed: int) -> np.ndarray:
    """Exact draw from the stationary periodic Gaussian field with the given spectrum.

    ``spectral_density`` is an (n, n) array in fft2 frequency layout giving the
    eigenvalues of the covariance operator; a flat density sigma^2 yields
    i.i.d. N(0, sigma^2) pixels.
    """
    dens = np.asarray(spectral_density, dtype=np.float64)
    if dens.shape != (image_size, image_size):
        raise ValueError("spectral density shape must match image size")
    if np.any(dens < 0):
        raise ValueError("spectral density must be nonnegative")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((image_size, image_size))
    spec = np.fft.fft2(w, norm="ortho") * np.sqrt(dens)
    return np.real(np.fft.ifft2(spec, norm="ortho"))


class ChainDiverged(RuntimeError):
    pass


@dataclass
class MalaResult:
    samples: np.ndarray  # (n_kept, n, n)
    acceptance_rate: float
    step_size: float
    final: np.ndarray


def mala_chain(
    prior: GibbsPrior,
    image_size: int,
    n_steps: int,
    step_size: float,
    burn_in: int,
    seed: int,
    thin: int = 1,
    auto_tune: bool = True,
    target_acceptance: float = 0.57,
) -> MalaResult:
    """Metropolis-adjusted Langevin chain targeting exp(-lambda*S(x)).

    The step size is adapted toward the target acceptance rate during burn-in
    and frozen afterwards, so post-burn-in draws are from a valid chain.
    """
    if step_size <= 0:
        raise ValueError("step_size must be > 0")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((image_size, image_size)) * 0.01
    energy = gibbs_energy(x, prior)
    grad = gibbs_energy_grad(x, prior)
    tau = step_size
    kept = []
    accepted = 0
    proposals = 0
    window_acc, window_n = 0, 0
    for step in range(n_steps):
        noise = rng.standard_normal(x.shape)
        prop = x - tau * grad + np.sqrt(2.0 * tau) * noise
        if not np.all(np.isfinite(prop)):
            raise ChainDiverged(f"MALA diverged at step {step}: non-finite state, step size {tau:.3e}")
        prop_energy = gibbs_energy(prop, prior)
        prop_grad = gibbs_energy_grad(prop, prior)
        if not np.isfinite(prop_energy) or prop_energy > 1e14:
            raise ChainDiverged(
                f"MALA diverged at step {step}: energy {prop_energy:.3e}, "
                f"step size {tau:.3e}"
            )
        # q(x | x') vs q(x' | x) for the Langevin proposal
        fwd = prop - (x - tau * grad)
        rev = x - (prop - tau * prop_grad)
        log_q_fwd = -np.sum(fwd**2) / (4.0 * tau)
        log_q_rev = -np.sum(rev**2) / (4.0 * tau)
        log_alpha = (energy - prop_energy) + (log_q_rev - log_q_fwd)
        accept = np.log(rng.uniform()) < log_alpha
        if accept:
            x, energy, grad = prop, prop_energy, prop_grad
        if step >= burn_in:
            accepted += accept
            proposals += 1
            if (step - burn_in) % thin == 0:
                kept.append(x.copy())
        elif auto_tune:
            window_acc += accept
            window_n += 1
            if window_n == 25:
                rate = window_acc / window_n
                tau *= float(np.exp(0.5 * (rate - target_acceptance)))
                window_acc, window_n = 0, 0
    return MalaResult(
        samples=np.array(kept),
        acceptance_rate=accepted / max(proposals, 1),
        step_size=tau,
        final=x,
    )


def sample_gibbs_mala(
    prior: GibbsPrior,
    image_size: int,
    n_steps: int,
    step_size: float,
    burn_in: int,
    seed: int,
) -> np.ndarray:
    """One draw from the chain after burn-in."""
    res = mala_chain(
        prior, image_size, n_steps, step_size, burn_in, seed, thin=max(n_steps - burn_in, 1)
    )
    return res.final


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

@dataclass
class Phantom:
    image: np.ndarray  # HU
    kind: str
    lesion: dict | None = None  # center (i, j), radius_px, contrast_hu, organ_hu
    lesion_region: np.ndarray | None = None  # mask the lesion center was drawn from


def _ellipse_mask(n, ci, cj, ri, rj, angle=0.0):
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    di, dj = ii - ci, jj - cj
    c, s = np.cos(angle), np.sin(angle)
    u = (c * di + s * dj) / ri
    v = (-s * di + c * dj) / rj
    return u**2 + v**2 <= 1.0


def make_phantom(
    kind: str,
    image_size: int,
    seed: int,
    lesion_contrast_hu: float | None = None,
) -> Phantom:
    """Synthetic HU phantoms: smooth 'blobs' or piecewise-constant 'organ'.

    Values stay in [0, 400] HU so the transmission noise model sees
    nonnegative line integrals.  The organ phantom can carry a circular
    low-contrast lesion (value = organ - contrast) at a recorded location
    drawn uniformly over the organ interior.
    """
    n = image_size
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        grid = np.linspace(-0.5, 0.5, n, endpoint=False) + 0.5 / n
        xx, yy = np.meshgrid(grid, grid, indexing="ij")
        img = np.zeros((n, n))
        for _ in range(rng.integers(3, 7)):
            amp = rng.uniform(30.0, 150.0)
            cx, cy = rng.uniform(-0.25, 0.25, size=2)
            w = rng.uniform(0.05, 0.2)
            img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * w**2))
        return Phantom(image=np.clip(img, 0.0, 400.0), kind=kind)
    if kind == "organ":
        img = np.zeros((n, n))
        body = _ellipse_mask(n, n / 2, n / 2, 0.44 * n, 0.40 * n, rng.uniform(0, np.pi))
        img[body] = 20.0
        organs = []
        for _ in range(rng.integers(1, 4)):
            ci, cj = rng.uniform(0.3 * n, 0.7 * n, size=2)
            ri, rj = rng.uniform(0.10 * n, 0.22 * n, size=2)
            val = rng.uniform(60.0, 120.0)
            m = _ellipse_mask(n, ci, cj, ri, rj, rng.uniform(0, np.pi)) & body
            img[m] = val
            organs.append((m, val))
        lesion = None
        region = None
        if lesion_contrast_hu is not None and organs:
            # later organs may overwrite earlier ones; place the lesion in a
            # region that still holds its organ's value
            order = rng.permutation(len(organs))
            val = None
            for idx in order:
                m, v = organs[idx]
                interior = m & (img == v) & ~_boundary(m)
                if interior.any():
                    region, val = interior, v
                    break
            if region is None:
                region, val = _ellipse_mask(n, n / 2, n / 2, 0.3 * n, 0.3 * n), 20.0
            cand = np.argwhere(region)
            ci, cj = cand[int(rng.integers(len(cand)))]
            radius = max(2.0, 0.04 * n)
            lm = _ellipse_mask(n, ci, cj, radius, radius)
            img[lm & (img == val)] = val - lesion_contrast_hu
            lesion = {
                "center": (int(ci), int(cj)),
                "radius_px": float(radius),
                "contrast_hu": float(lesion_contrast_hu),
                "organ_hu": float(val),
            }
        return Phantom(image=img, kind=kind, lesion=lesion, lesion_region=region)
    raise ValueError(f"unknown phantom kind {kind!r}")


def _boundary(mask):
    er = scipy.ndimage.binary_erosion(mask, iterations=3)
    return mask & ~er


# ---------------------------------------------------------------------------
# supervised pairs
# ---------------------------------------------------------------------------

@dataclass
class SupervisedPair:
    x: np.ndarray  # ground truth, scaled units (1 unit = 1000 HU)
    y: np.ndarray  # observation / FBP image, same units


@dataclass
class Dataset:
    pairs: list
    fingerprint: str


@dataclass(frozen=True)
class AugmentationConfig:
    """Per-draw augmentation; amplitude fields are quoted in HU."""

    flip_lr: bool = False
    rotate_deg: float = 0.0
    dequant_hu: float = 0.0
    offset_std_hu: float = 0.0

    def __post_init__(self):
        if self.rotate_deg < 0:
            raise ValueError("rotate_deg is a half-range and must be >= 0")

    @classmethod
    def paper_defaults(cls) -> "AugmentationConfig":
        return cls(flip_lr=True, rotate_deg=10.0, dequant_hu=1.0, offset_std_hu=10.0)

    def all_off(self) -> bool:
        return not self.flip_lr and self.rotate_deg == 0 and self.dequant_hu == 0 and self.offset_std_hu == 0


def make_dataset(
    n: int,
    phantom_kind: str,
    operator: LinearOperator,
    noise_model: NoiseModel,
    fbp_cfg: dict | None,
    seed: int,
    lesion_contrast_hu: float | None = None,
) -> Dataset:
    """Supervised pairs: x = scaled phantom, y = reconstruction of its noisy data.

    For the radon operator y is the Hann-filtered FBP of the noisy sinogram
    (fbp_cfg supplies the cutoff); for image-to-image operators y is the noisy
    observation itself.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    fbp_cfg = dict(fbp_cfg or {})
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(n)
    pairs = []
    for k in range(n):
        sub = children[k].generate_state(2)
        phantom = make_phantom(
            phantom_kind, operator.in_shape[0], int(sub[0]), lesion_contrast_hu
        )
        x = phantom.image / HU_PER_UNIT
        obs = apply_dose_noise(operator.forward(x), noise_model, int(sub[1]))
        if operator.kind == "radon":
            y = fbp_reconstruct(
                obs, operator.params["geometry"], cutoff=float(fbp_cfg.get("cutoff", 0.4))
            )
        else:
            y = obs
        pairs.append(SupervisedPair(x=x.astype(np.float32), y=y.astype(np.float32)))
    flat: Iterable[np.ndarray] = (t for p in pairs for t in (p.x, p.y))
    return Dataset(pairs=pairs, fingerprint=fingerprint_tensors(flat))


def augment(pair: SupervisedPair, cfg: AugmentationConfig, seed: int) -> SupervisedPair:
    """Identical spatial transform on x and y, plus pixel dequantization noise
    and a shared mean-offset draw."""
    rng = np.random.default_rng(seed)
    x = np.asarray(pair.x, dtype=np.float64)
    y = np.asarray(pair.y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("pair images must share a shape")
    if cfg.flip_lr and rng.uniform() < 0.5:
        x, y = x[:, ::-1], y[:, ::-1]
    if cfg.rotate_deg > 0:
        angle = rng.uniform(-cfg.rotate_deg, cfg.rotate_deg)
        x = scipy.ndimage.rotate(x, angle, reshape=False, order=1, mode="nearest")
        y = scipy.ndimage.rotate(y, angle, reshape=False, order=1, mode="nearest")
    if cfg.dequant_hu > 0:
        scale = cfg.dequant_hu / HU_PER_UNIT
        x = x + scale * rng.uniform(size=x.shape)
        y = y + scale * rng.uniform(size=y.shape)
    if cfg.offset_std_hu > 0:
        offset = rng.normal(0.0, cfg.offset_std_hu / HU_PER_UNIT)
        x = x + offset
        y = y + offset
    return SupervisedPair(x=x.astype(np.float32), y=y.astype(np.float32))
