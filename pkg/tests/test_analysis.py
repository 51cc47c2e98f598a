import numpy as np
import pytest
import scipy.optimize
import scipy.stats

import binv.analysis as an


def circle_mask(n, ci, cj, r):
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return (ii - ci) ** 2 + (jj - cj) ** 2 <= r**2


# ---------------------------------------------------------------------------
# independent oracle: W1 as a transport linear program over explicit flows
# ---------------------------------------------------------------------------

def w1_lp(p, q, grid):
    n = len(grid)
    cost = np.abs(grid[:, None] - grid[None, :]).ravel()
    a_eq = []
    for i in range(n):  # row marginals
        row = np.zeros((n, n))
        row[i, :] = 1.0
        a_eq.append(row.ravel())
    for j in range(n):  # column marginals
        col = np.zeros((n, n))
        col[:, j] = 1.0
        a_eq.append(col.ravel())
    b_eq = np.concatenate([p, q])
    res = scipy.optimize.linprog(cost, A_eq=np.array(a_eq), b_eq=b_eq,
                                 bounds=(0, None), method="highs")
    assert res.success
    return res.fun


# ---------------------------------------------------------------------------
# RLE masks
# ---------------------------------------------------------------------------

def test_rle_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(10):
        mask = rng.uniform(size=(9, 13)) < 0.3
        back = an.decode_mask_rle(an.encode_mask_rle(mask))
        assert np.array_equal(back, mask)


def test_rle_validation():
    with pytest.raises(ValueError):
        an.decode_mask_rle({"size": [4, 4], "counts": [3, 2]})


def test_roi_validation():
    f = circle_mask(16, 4, 4, 2)
    r = circle_mask(16, 10, 10, 2)
    an.validate_rois(f, r)
    with pytest.raises(ValueError):
        an.validate_rois(f, f)  # overlap
    with pytest.raises(ValueError):
        an.validate_rois(np.zeros((16, 16), bool), r)  # empty
    with pytest.raises(ValueError):
        an.validate_rois(f, r, shape=(8, 8))


# ---------------------------------------------------------------------------
# sample statistics
# ---------------------------------------------------------------------------

def test_mean_pstd_trivial_cases():
    a = np.random.default_rng(1).standard_normal((5, 5))
    two_same = np.stack([a, a])
    assert np.allclose(an.sample_mean(two_same), a)
    assert np.allclose(an.sample_pstd(two_same), 0.0)
    zero_two = np.stack([np.zeros((3, 3)), np.full((3, 3), 2.0)])
    assert np.allclose(an.sample_mean(zero_two), 1.0)
    assert np.allclose(an.sample_pstd(zero_two), 1.0)  # population convention


def test_pstd_single_sample_is_error():
    with pytest.raises(ValueError):
        an.sample_pstd(np.zeros((1, 4, 4)))


def test_pstd_matches_oracle_draws():
    rng = np.random.default_rng(2)
    true_std = 1.7
    draws = true_std * rng.standard_normal((10_000, 6, 6))
    est = an.sample_pstd(draws)
    se = true_std * np.sqrt(1.0 / (2 * draws.shape[0]))
    assert np.all(np.abs(est - true_std) <= 5 * se)


# ---------------------------------------------------------------------------
# delta statistic
# ---------------------------------------------------------------------------

def test_delta_trivial_values():
    n = 16
    f, r = circle_mask(n, 5, 5, 2), circle_mask(n, 11, 11, 2)
    assert an.delta_statistic(np.full((n, n), 7.0), f, r) == pytest.approx(0.0)
    img = np.full((n, n), 100.0)
    img[f] = 70.0
    assert an.delta_statistic(img, f, r) == pytest.approx(30.0)


def test_delta_affine_equivariance():
    n = 16
    f, r = circle_mask(n, 5, 5, 2), circle_mask(n, 11, 11, 2)
    img = np.random.default_rng(3).standard_normal((n, n))
    d = an.delta_statistic(img, f, r)
    assert an.delta_statistic(2.5 * img + 7.0, f, r) == pytest.approx(2.5 * d)


# ---------------------------------------------------------------------------
# ROI tests
# ---------------------------------------------------------------------------

def test_sampling_all_above_threshold():
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    img = np.zeros((n, n))
    img[r] = 20.0
    samples = np.stack([img] * 50)
    res = an.roi_test_sampling(samples, f, r, tau=10.0)
    assert res.p_value == 1.0
    assert res.n_samples == 50


def test_sampling_p_shift_invariance():
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    rng = np.random.default_rng(4)
    samples = rng.standard_normal((200, n, n))
    res = an.roi_test_sampling(samples, f, r, tau=0.3)
    # adding a constant to all samples leaves every Delta unchanged
    res_shift = an.roi_test_sampling(samples + 5.0, f, r, tau=0.3)
    assert res_shift.p_value == res.p_value


def test_sampling_matches_exact_gaussian_tail():
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    w = an.roi_weight_vector(f, r)
    rng = np.random.default_rng(5)
    # correlated Gaussian images with known Delta law
    cov_chol = np.linalg.cholesky(
        0.5 * np.eye(n * n) + 0.1 * np.ones((n * n, n * n)) / (n * n) * (n * n) * 0.02
    )
    draws = (cov_chol @ rng.standard_normal((n * n, 10_000))).T.reshape(-1, n, n)
    sigma = float(np.sqrt(w.ravel() @ (cov_chol @ cov_chol.T) @ w.ravel()))
    tau = 0.4 * sigma
    res = an.roi_test_sampling(draws, f, r, tau=tau)
    exact = scipy.stats.norm.sf(tau / sigma)
    assert res.p_value == pytest.approx(exact, abs=0.02)


def test_direct_single_pixel_rois():
    var = np.zeros((8, 8))
    f = np.zeros((8, 8), bool)
    r = np.zeros((8, 8), bool)
    f[2, 2], r[5, 5] = True, True
    var[2, 2], var[5, 5] = 3.0, 4.0
    assert an.direct_sigma_delta(var, f, r) == pytest.approx(np.sqrt(7.0))


def test_direct_p_matches_mc_independent_pixels():
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    rng = np.random.default_rng(6)
    mean_img = rng.standard_normal((n, n)) * 0.1
    var_img = rng.uniform(0.5, 2.0, size=(n, n))
    tau = 0.2
    res = an.roi_test_direct(mean_img, var_img, f, r, tau=tau)
    draws = mean_img + np.sqrt(var_img) * rng.standard_normal((100_000, n, n))
    flat = draws.reshape(draws.shape[0], -1)
    deltas = flat[:, r.ravel()].mean(axis=1) - flat[:, f.ravel()].mean(axis=1)
    mc_p = (deltas > tau).mean()
    assert res.p_value == pytest.approx(mc_p, abs=0.01)


def test_direct_underestimates_under_positive_correlation():
    # oracle covariance with positive off-diagonals: the independence
    # assumption must strictly understate sigma_Delta
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    w = an.roi_weight_vector(f, r)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    coords = np.stack([ii.ravel(), jj.ravel()], axis=1).astype(float)
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    cov = np.exp(-d2 / (2 * 2.0**2))
    true_sigma = float(np.sqrt(w.ravel() @ cov @ w.ravel()))
    ind_sigma = an.direct_sigma_delta(np.diag(cov).reshape(n, n), f, r)
    assert ind_sigma < true_sigma


def test_direct_degenerate_zero_sigma():
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    mean_img = np.zeros((n, n))
    mean_img[r] = 10.0  # mu_delta = 10 exactly
    res = an.roi_test_direct(mean_img, np.zeros((n, n)), f, r, tau=10.0)
    assert res.degenerate and res.p_value == 0.5
    res2 = an.roi_test_direct(mean_img, np.zeros((n, n)), f, r, tau=5.0)
    assert res2.degenerate and res2.p_value == 1.0


def test_direct_rejects_negative_variance():
    n = 8
    f, r = circle_mask(n, 2, 2, 1), circle_mask(n, 5, 5, 1)
    with pytest.raises(ValueError):
        an.roi_test_direct(np.zeros((n, n)), np.full((n, n), -1.0), f, r, 1.0)


# ---------------------------------------------------------------------------
# W1
# ---------------------------------------------------------------------------

def test_w1_identical_and_point_masses():
    grid = np.linspace(0, 1, 7)
    p = np.full(7, 1 / 7)
    assert an.w1_discrete(p, p, grid) == 0.0
    a = np.zeros(7)
    b = np.zeros(7)
    a[1], b[5] = 1.0, 1.0
    assert an.w1_discrete(a, b, grid) == pytest.approx(abs(grid[1] - grid[5]))


def test_w1_matches_lp_oracle():
    rng = np.random.default_rng(7)
    for _ in range(12):
        n = rng.integers(4, 11)
        grid = np.sort(rng.uniform(-3, 3, size=n))
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        assert an.w1_discrete(p, q, grid) == pytest.approx(w1_lp(p, q, grid), abs=1e-8)


def test_w1_metric_properties():
    rng = np.random.default_rng(8)
    grid = np.sort(rng.uniform(-2, 2, size=9))
    p, q, s = (rng.dirichlet(np.ones(9)) for _ in range(3))
    assert an.w1_discrete(p, q, grid) == pytest.approx(an.w1_discrete(q, p, grid))
    assert an.w1_discrete(p, s, grid) <= an.w1_discrete(p, q, grid) + an.w1_discrete(
        q, s, grid
    ) + 1e-12


def test_w1_validation():
    grid = np.linspace(0, 1, 4)
    bad = np.array([0.5, 0.2, 0.2, 0.2])  # sums to 1.1
    ok = np.full(4, 0.25)
    with pytest.raises(ValueError):
        an.w1_discrete(bad, ok, grid)
    with pytest.raises(ValueError):
        an.w1_discrete(ok, ok, grid[::-1].copy())


def test_w1_critic_bridge():
    grid = np.linspace(-2.0, 2.0, 16)
    p = np.exp(-((grid + 0.8) ** 2) / 0.3)
    p /= p.sum()
    q = np.exp(-((grid - 0.8) ** 2) / 0.5)
    q /= q.sum()
    true = an.w1_discrete(p, q, grid)
    res = an.train_w1_critic(grid, p, q, steps=1500, seed=0)
    assert abs(res.estimate - true) / true <= 0.10
