"""Acceptance gate: every criterion at its stated tolerance.

The trained-network criteria share four runs (paired sampler, unconditional
ablation, direct mean, direct variance) trained once per session on the
canonical 32^2 Gaussian-linear problem; everything else is analytic.  Each
test prints one PASS/FAIL line (run pytest -s to stream them).
"""

import numpy as np
import pytest

import binv.acceptance as acc
import binv.direct_estimation as de
import binv.wgan_training as wt


def report(result: acc.CheckResult):
    print(f"ACCEPTANCE {'PASS' if result.passed else 'FAIL'} | {result.name}: {result.detail}")
    assert result.passed, f"{result.name}: {result.detail}"


# ---------------------------------------------------------------------------
# analytic criteria
# ---------------------------------------------------------------------------

def test_accept_loss_function_exactness():
    report(acc.check_loss_exactness())


def test_accept_prop1_tabular_oracle():
    report(acc.check_prop1_tabular())


def test_accept_w1_utility():
    report(acc.check_w1_utility(include_critic=True))


def test_accept_forward_model_suite():
    report(acc.check_forward_model_suite())


def test_accept_gibbs_prior_suite():
    report(acc.check_gibbs_prior_suite())


def test_accept_reproducibility():
    report(acc.check_reproducibility())


# ---------------------------------------------------------------------------
# trained-run criteria
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def acceptance_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-runs")
    setup = acc.acceptance_train_setup()
    dataset = acc.acceptance_dataset()
    paired = wt.train_wgan(
        dataset, setup["gen"], setup["disc"], setup["wgan"], root, run_id="paired"
    )
    ablation = wt.train_wgan_unconditional_discriminator(
        dataset, setup["gen"], setup["disc"], setup["wgan"], root, run_id="ablation"
    )
    mean = de.train_mean(dataset, setup["estimator"], setup["direct"], root,
                         run_id="direct-mean")
    var = de.train_variance(dataset, mean, setup["estimator"], setup["direct"], root,
                            run_id="direct-var")
    return {"paired": paired, "ablation": ablation, "mean": mean, "var": var}


@pytest.fixture(scope="session")
def wgan_stats(acceptance_runs):
    return acc.evaluate_wgan_against_oracle(acceptance_runs["paired"])


def test_accept_wgan_posterior_mean(acceptance_runs, wgan_stats):
    report(acc.check_wgan_mean(acceptance_runs["paired"], wgan_stats))


def test_accept_wgan_pointwise_std(acceptance_runs, wgan_stats):
    report(acc.check_wgan_pstd(acceptance_runs["paired"], wgan_stats))


def test_accept_direct_estimation(acceptance_runs, wgan_stats):
    report(acc.check_direct_estimation(acceptance_runs["mean"], acceptance_runs["var"],
                                       wgan_stats))


def test_accept_mode_collapse_ablation(acceptance_runs):
    report(acc.check_mode_collapse_ablation(acceptance_runs["paired"],
                                            acceptance_runs["ablation"]))


def test_accept_hypothesis_test_recovery(acceptance_runs):
    report(acc.check_hypothesis_test(acceptance_runs["paired"]))


def test_accept_wgan_beats_identity_baseline(acceptance_runs, wgan_stats):
    """Recorded regression from the trainer contract: the trained sampler's
    posterior-mean error is at least 50% below the untrained (identity)
    generator, which would return y itself."""
    model, held = acc.held_out_observations()
    prior_std = np.sqrt(model.prior_pointwise_variance)
    import binv.oracle as oc

    base = []
    for x, y in held:
        mom = oc.gaussian_posterior_moments(model, y, keep_covariance=False)
        base.append(np.sqrt(np.mean((y - mom.mean) ** 2)) / prior_std)
    baseline = float(np.median(base))
    trained = wgan_stats["median_mean_rmse_frac"]
    print(f"ACCEPTANCE INFO | identity baseline {baseline:.3f} -> trained {trained:.3f}")
    assert trained <= 0.5 * baseline
