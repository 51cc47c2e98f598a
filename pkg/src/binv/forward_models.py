"""Desk-scale linear forward operators and dose-noise models.

The tomography operator is a 2-D parallel-beam Radon transform discretized
with exact ray/pixel intersection lengths, assembled once per geometry into
a sparse matrix.  The adjoint is the matrix transpose, so the adjoint test
holds to float round-off, and an impulse image maps exactly to per-ray
chord lengths through that pixel.

Images live on a square grid of ``image_size`` pixels spanning ``fov``
physical units per side.  Pixel (i, j) covers
x in [-fov/2 + j*px, -fov/2 + (j+1)*px], y likewise with row index i, where
px = fov / image_size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse

from . import HU_PER_UNIT

# Attenuation per HU of path length: a 100 HU object spanning the unit fov
# attenuates by e^-2.  Sinograms in scaled model units (1 unit = 1000 HU)
# therefore use mu_scale = MU_PER_HU * HU_PER_UNIT.
MU_PER_HU = 0.02
# Zero photon counts are clamped here before the log; a known bias source.
MIN_COUNTS = 0.5


@dataclass(frozen=True)
class Geometry:
    """Parallel-beam acquisition: uniform angles in [0, pi)."""

    n_angles: int
    n_detectors: int
    image_size: int
    fov: float = 1.0

    def __post_init__(self):
        if self.n_angles < 1 or self.n_detectors < 1 or self.image_size < 1:
            raise ValueError("geometry counts must be >= 1")
        if self.fov <= 0:
            raise ValueError("fov must be positive")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * np.pi / self.n_angles

    @property
    def detector_spacing(self) -> float:
        # covers the image diagonal
        return self.fov * np.sqrt(2.0) / self.n_detectors

    @property
    def detector_offsets(self) -> np.ndarray:
        c = (self.n_detectors - 1) / 2.0
        return (np.arange(self.n_detectors) - c) * self.detector_spacing

    @property
    def pixel_size(self) -> float:
        return self.fov / self.image_size

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_detectors)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_size, self.image_size)


_matrix_cache: dict[Geometry, scipy.sparse.csr_matrix] = {}


def _ray_grid_crossings(theta: float, offset: float, half: float, px: float, n: int):
    """Sorted parameter values where the ray crosses grid lines inside the fov.

    The ray is p(t) = offset*(cos t, sin t) + t*(-sin t, cos t).
    Returns (t_lo, t_hi, ts) or None when the ray misses the image square.
    """
    ox, oy = offset * np.cos(theta), offset * np.sin(theta)
    ux, uy = -np.sin(theta), np.cos(theta)

    t_lo, t_hi = -np.inf, np.inf
    for o, u in ((ox, ux), (oy, uy)):
        if abs(u) < 1e-14:
            if abs(o) >= half:
                return None
        else:
            ta, tb = (-half - o) / u, (half - o) / u
            t_lo = max(t_lo, min(ta, tb))
            t_hi = min(t_hi, max(ta, tb))
    if not t_hi > t_lo:
        return None

    lines = -half + px * np.arange(n + 1)
    ts = [np.array([t_lo, t_hi])]
    for o, u in ((ox, ux), (oy, uy)):
        if abs(u) >= 1e-14:
            cross = (lines - o) / u
            ts.append(cross[(cross > t_lo) & (cross < t_hi)])
    return t_lo, t_hi, np.unique(np.concatenate(ts))


def system_matrix(geometry: Geometry) -> scipy.sparse.csr_matrix:
    """Sparse (n_rays x n_pixels) matrix of exact ray/pixel intersection lengths."""
    if geometry in _matrix_cache:
        return _matrix_cache[geometry]

    n = geometry.image_size
    px = geometry.pixel_size
    half = geometry.fov / 2.0
    rows, cols, vals = [], [], []
    for a, theta in enumerate(geometry.angles):
        ct, st = np.cos(theta), np.sin(theta)
        for d, s in enumerate(geometry.detector_offsets):
            hit = _ray_grid_crossings(theta, s, half, px, n)
            if hit is None:
                continue
            _, _, ts = hit
            seg = np.diff(ts)
            mids = (ts[:-1] + ts[1:]) / 2.0
            mx = s * ct - mids * st
            my = s * st + mids * ct
            jj = np.floor((mx + half) / px).astype(int)
            ii = np.floor((my + half) / px).astype(int)
            ok = (seg > 1e-12) & (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n)
            ray = a * geometry.n_detectors + d
            rows.extend([ray] * int(ok.sum()))
            cols.extend((ii[ok] * n + jj[ok]).tolist())
            vals.extend(seg[ok].tolist())

    mat = scipy.sparse.csr_matrix(
        (vals, (rows, cols)),
        shape=(geometry.n_angles * geometry.n_detectors, n * n),
        dtype=np.float64,
    )
    _matrix_cache[geometry] = mat
    return mat


def radon_forward(image: np.ndarray, geometry: Geometry) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geometry.image_shape:
        raise ValueError(f"image shape {image.shape} != geometry {geometry.image_shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    sino = system_matrix(geometry) @ image.ravel()
    return sino.reshape(geometry.sino_shape)


def radon_adjoint(sinogram: np.ndarray, geometry: Geometry) -> np.ndarray:
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if sinogram.shape != geometry.sino_shape:
        raise ValueError(f"sinogram shape {sinogram.shape} != geometry {geometry.sino_shape}")
    img = system_matrix(geometry).T @ sinogram.ravel()
    return img.reshape(geometry.image_shape)


def ramp_hann_filter(n: int, spacing: float, cutoff: float) -> np.ndarray:
    """Ramp filter apodized by a Hann window that reaches zero at cutoff*Nyquist."""
    freqs = np.fft.fftfreq(n, d=spacing)
    nyquist = 0.5 / spacing
    fc = cutoff * nyquist
    window = np.where(
        np.abs(freqs) <= fc, 0.5 * (1.0 + np.cos(np.pi * freqs / fc)), 0.0
    )
    return np.abs(freqs) * window


def fbp_reconstruct(sinogram: np.ndarray, geometry: Geometry, cutoff: float = 0.4) -> np.ndarray:
    """Filtered backprojection: per-angle frequency-domain ramp*Hann, then adjoint.

    The adjoint is scaled by pi/n_angles; the extra spacing/px^2 factor
    converts the length-weighted discrete adjoint into the continuous
    backprojection it approximates, making fbp(radon(x)) ~ x on smooth images.
    """
    if not 0.0 < cutoff <= 1.0:
        raise ValueError(f"cutoff must be in (0, 1], got {cutoff}")
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if sinogram.shape != geometry.sino_shape:
        raise ValueError(f"sinogram shape {sinogram.shape} != geometry {geometry.sino_shape}")

    n_det = geometry.n_detectors
    npad = 1
    while npad < 2 * n_det:
        npad *= 2
    filt = ramp_hann_filter(npad, geometry.detector_spacing, cutoff)
    padded = np.zeros((geometry.n_angles, npad))
    padded[:, :n_det] = sinogram
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * filt, axis=1))[:, :n_det]

    scale = geometry.detector_spacing / geometry.pixel_size**2
    return radon_adjoint(filtered * scale, geometry) * (np.pi / geometry.n_angles)


@dataclass(frozen=True)
class NoiseModel:
    """Measurement-noise description for sinograms or direct observations.

    ``mu_scale`` is the attenuation per unit of sinogram value; the physical
    constant is 0.02 per HU of path, so sinograms in scaled model units use
    the default 0.02 * 1000.
    """

    kind: str = "poisson_transmission"
    photons_per_pixel: float = 1000.0
    sigma: float = 0.0
    mu_scale: float = MU_PER_HU * HU_PER_UNIT

    def __post_init__(self):
        if self.kind not in ("poisson_transmission", "gaussian", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "poisson_transmission" and self.photons_per_pixel <= 0:
            raise ValueError("photons_per_pixel must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


def apply_dose_noise(sinogram: np.ndarray, noise_model: NoiseModel, rng_seed: int) -> np.ndarray:
    """Seeded noisy measurement of a sinogram.

    Transmission model: counts ~ Poisson(I0 * exp(-sino * mu_scale)),
    returned as -log(counts / I0) / mu_scale with zero counts clamped to
    MIN_COUNTS before the log.
    """
    sinogram = np.asarray(sinogram, dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    if noise_model.kind == "none":
        return sinogram.copy()
    if noise_model.kind == "gaussian":
        return sinogram + noise_model.sigma * rng.standard_normal(sinogram.shape)
    if np.any(sinogram < -1e-9):
        raise ValueError("transmission noise requires nonnegative line integrals")
    i0 = noise_model.photons_per_pixel
    mu = noise_model.mu_scale
    expected = i0 * np.exp(-np.clip(sinogram, 0.0, None) * mu)
    counts = rng.poisson(expected).astype(np.float64)
    counts = np.maximum(counts, MIN_COUNTS)
    return -np.log(counts / i0) / mu


@dataclass
class LinearOperator:
    """Forward/adjoint pair with shape metadata; kinds: identity, blur, radon."""

    kind: str
    in_shape: tuple[int, int]
    out_shape: tuple[int, int]
    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


def _gaussian_kernel_fft(n: int, sigma_px: float) -> np.ndarray:
    idx = np.arange(n)
    d = np.minimum(idx, n - idx).astype(np.float64)  # periodic distance
    g1 = np.exp(-0.5 * (d / max(sigma_px, 1e-12)) ** 2)
    kernel = np.outer(g1, g1)
    kernel /= kernel.sum()
    return np.fft.fft2(kernel)


def make_operator(kind: str, params: dict | None = None) -> LinearOperator:
    """Factory for the supported forward operators; all have exact adjoints."""
    params = dict(params or {})
    if kind == "identity":
        n = int(params["image_size"])
        eye = lambda x: np.asarray(x, dtype=np.float64).copy()
        return LinearOperator("identity", (n, n), (n, n), eye, eye, params)
    if kind == "blur":
        n = int(params["image_size"])
        sigma = float(params.get("sigma_px", 1.0))
        khat = _gaussian_kernel_fft(n, sigma)

        def fwd(x):
            return np.real(np.fft.ifft2(np.fft.fft2(np.asarray(x, dtype=np.float64)) * khat))

        def adj(x):
            return np.real(
                np.fft.ifft2(np.fft.fft2(np.asarray(x, dtype=np.float64)) * np.conj(khat))
            )

        return LinearOperator("blur", (n, n), (n, n), fwd, adj, params)
    if kind == "radon":
        geom = params.get("geometry")
        if geom is None:
            geom = Geometry(
                n_angles=int(params["n_angles"]),
                n_detectors=int(params["n_detectors"]),
                image_size=int(params["image_size"]),
                fov=float(params.get("fov", 1.0)),
            )
        return LinearOperator(
            "radon",
            geom.image_shape,
            geom.sino_shape,
            lambda x: radon_forward(x, geom),
            lambda s: radon_adjoint(s, geom),
            {"geometry": geom},
        )
    raise ValueError(f"unknown operator kind {kind!r}")


def operator_dense_matrix(op: LinearOperator) -> np.ndarray:
    """Dense matrix of the operator; intended for oracle-scale problems."""
    if op.kind == "radon":
        geom = op.params["geometry"]
        return system_matrix(geom).toarray()
    n_in = op.in_shape[0] * op.in_shape[1]
    basis = np.zeros(op.in_shape)
    cols = np.empty((op.out_shape[0] * op.out_shape[1], n_in))
    for k in range(n_in):
        basis.flat[k] = 1.0
        cols[:, k] = op.forward(basis).ravel()
        basis.flat[k] = 0.0
    return cols
