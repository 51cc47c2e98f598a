"""Closed-form Gaussian-linear posterior and tabular conditional-mean oracle.

For x ~ N(mu0, Sigma0) with circulant Sigma0 (given by a spectral density on
the periodic grid), y = A x + n, n ~ N(0, Sigma_n) diagonal, the posterior is

    mean = mu0 + Sigma0 A^T (A Sigma0 A^T + Sigma_n)^-1 (y - A mu0)
    cov  = Sigma0 - Sigma0 A^T (A Sigma0 A^T + Sigma_n)^-1 A Sigma0

solved with a symmetric (Cholesky) factorization.  Dense linear algebra is
capped at 32^2 images so the full covariance stays exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .forward_models import LinearOperator, operator_dense_matrix
from .persistence import fingerprint_tensors
from .priors import Dataset, SupervisedPair, sample_gaussian_field

ORACLE_MAX_SIZE = 32


class DecompositionError(RuntimeError):
    """Covariance factorization failed (input not SPD)."""


@dataclass
class GaussianLinearModel:
    operator: LinearOperator
    prior_mean: np.ndarray  # image
    prior_spectral_density: np.ndarray  # fft2 layout, eigenvalues of Sigma0
    noise_variance: float | np.ndarray  # scalar or per-data-element diagonal
    _dense: dict = field(default=None, repr=False, compare=False)

    @property
    def image_size(self) -> int:
        return self.operator.in_shape[0]

    @property
    def prior_pointwise_variance(self) -> float:
        # circulant covariance has constant diagonal mean(spectral density)
        return float(np.mean(self.prior_spectral_density))

    def noise_diag(self) -> np.ndarray:
        n_out = self.operator.out_shape[0] * self.operator.out_shape[1]
        d = np.asarray(self.noise_variance, dtype=np.float64)
        return np.full(n_out, float(d)) if d.ndim == 0 else d.ravel()

    def dense(self) -> dict:
        if self._dense is not None:
            return self._dense
        n = self.image_size
        if n > ORACLE_MAX_SIZE:
            raise ValueError(f"oracle dense algebra capped at {ORACLE_MAX_SIZE}^2, got {n}^2")
        a = operator_dense_matrix(self.operator)
        kernel = np.real(np.fft.ifft2(self.prior_spectral_density))
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        pi, pj = ii.ravel(), jj.ravel()
        sigma0 = kernel[(pi[:, None] - pi[None, :]) % n, (pj[:, None] - pj[None, :]) % n]
        self._dense = {"A": a, "Sigma0": sigma0}
        return self._dense


@dataclass
class PosteriorMoments:
    mean: np.ndarray
    pointwise_variance: np.ndarray
    covariance: np.ndarray | None = None


def gaussian_posterior_moments(
    model: GaussianLinearModel, y: np.ndarray, keep_covariance: bool = True
) -> PosteriorMoments:
    d = model.dense()
    a, sigma0 = d["A"], d["Sigma0"]
    shape = model.operator.in_shape
    mu0 = np.asarray(model.prior_mean, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    s = a @ sigma0 @ a.T + np.diag(model.noise_diag())
    try:
        cho = scipy.linalg.cho_factor(s, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise DecompositionError(f"data covariance is not SPD: {exc}") from exc
    k = sigma0 @ a.T
    mean = mu0 + k @ scipy.linalg.cho_solve(cho, yv - a @ mu0)
    cov = sigma0 - k @ scipy.linalg.cho_solve(cho, k.T)
    cov = (cov + cov.T) / 2.0
    var = np.clip(np.diag(cov), 0.0, None)
    return PosteriorMoments(
        mean=mean.reshape(shape),
        pointwise_variance=var.reshape(shape),
        covariance=cov if keep_covariance else None,
    )


def _chol_with_jitter(cov: np.ndarray) -> np.ndarray:
    scale = max(np.mean(np.diag(cov)), 1e-300)
    for jitter in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(cov + jitter * scale * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise DecompositionError("posterior covariance is not SPD even with jitter")


def sample_gaussian_posterior(
    model: GaussianLinearModel, y: np.ndarray, n: int, seed: int
) -> np.ndarray:
    """n exact posterior draws, shape (n, size, size)."""
    mom = gaussian_posterior_moments(model, y, keep_covariance=True)
    chol = _chol_with_jitter(mom.covariance)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((cov_dim := chol.shape[0], n))
    draws = mom.mean.ravel()[None, :] + (chol @ z).T
    assert cov_dim == draws.shape[1]
    return draws.reshape(n, *model.operator.in_shape)


def linear_functional_posterior(
    model: GaussianLinearModel, y: np.ndarray, weights: np.ndarray
) -> tuple[float, float]:
    """Exact Normal law (mu, sigma) of <weights, x> under the posterior."""
    mom = gaussian_posterior_moments(model, y, keep_covariance=True)
    w = np.asarray(weights, dtype=np.float64).ravel()
    mu = float(w @ mom.mean.ravel())
    var = float(w @ mom.covariance @ w)
    return mu, float(np.sqrt(max(var, 0.0)))


# ---------------------------------------------------------------------------
# tabular conditional expectation
# ---------------------------------------------------------------------------

def tabular_conditional_mean(x_values: np.ndarray, joint: np.ndarray):
    """h*(y) = sum_x x p(x, y) / p(y) on a finite joint table.

    Returns (table, excluded) where ``excluded`` flags y bins of zero
    probability (their table entries are NaN).
    """
    x_values = np.asarray(x_values, dtype=np.float64)
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or joint.shape[0] != x_values.size:
        raise ValueError("joint must be (n_x, n_y) aligned with x_values")
    if np.any(joint < 0):
        raise ValueError("joint table must be nonnegative")
    total = joint.sum()
    if total <= 0:
        raise ValueError("joint table must have positive mass")
    p = joint / total
    p_y = p.sum(axis=0)
    excluded = p_y <= 0
    table = np.full(p.shape[1], np.nan)
    table[~excluded] = (x_values @ p[:, ~excluded]) / p_y[~excluded]
    return table, excluded


def tabular_squared_loss(x_values: np.ndarray, joint: np.ndarray, h: np.ndarray) -> float:
    """Empirical Bayes risk sum_xy p(x,y) (h(y) - x)^2 for a tabular rule h."""
    p = np.asarray(joint, dtype=np.float64)
    p = p / p.sum()
    x = np.asarray(x_values, dtype=np.float64)
    return float(np.sum(p * (h[None, :] - x[:, None]) ** 2))


# ---------------------------------------------------------------------------
# supervised data from the analytic model
# ---------------------------------------------------------------------------

def sample_prior(model: GaussianLinearModel, seed: int) -> np.ndarray:
    n = model.image_size
    return np.asarray(model.prior_mean, dtype=np.float64) + sample_gaussian_field(
        model.prior_spectral_density, n, seed
    )


def simulate_observation(model: GaussianLinearModel, x: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    clean = model.operator.forward(x)
    noise = rng.standard_normal(clean.shape) * np.sqrt(
        model.noise_diag().reshape(clean.shape)
    )
    return clean + noise


def make_gaussian_dataset(model: GaussianLinearModel, n: int, seed: int) -> Dataset:
    """(x, y) pairs drawn exactly from the analytic model; y is image-shaped
    for image-to-image operators and a sinogram for the radon operator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ss = np.random.SeedSequence(seed)
    pairs = []
    for child in ss.spawn(n):
        s1, s2 = child.generate_state(2)
        x = sample_prior(model, int(s1))
        y = simulate_observation(model, x, int(s2))
        pairs.append(SupervisedPair(x=x.astype(np.float32), y=y.astype(np.float32)))
    flat = (t for p in pairs for t in (p.x, p.y))
    return Dataset(pairs=pairs, fingerprint=fingerprint_tensors(flat))
