import numpy as np
import pytest
from scipy import stats

from core.errors import EmptySupportError
from core.models import SkellamParams
from estimation.skellam import (
    choose_imax,
    sample_conditional,
    sample_conditional_batch,
    skellam_logpmf,
    skellam_pmf,
    truncated_joint_pmf,
)

INTENSITIES = [0.5, 1.0, 5.0, 20.0]


def brute_force_pmf(delta, lam_in, lam_out, upper=400):
    i = np.arange(max(0, delta), upper)
    return float(np.sum(stats.poisson.pmf(i, lam_in) * stats.poisson.pmf(i - delta, lam_out)))


@pytest.mark.parametrize("lam_in", INTENSITIES)
@pytest.mark.parametrize("lam_out", INTENSITIES)
def test_pmf_matches_poisson_convolution(lam_in, lam_out):
    params = SkellamParams(lam_in, lam_out)
    for delta in range(-20, 21):
        assert skellam_pmf(delta, params) == pytest.approx(brute_force_pmf(delta, lam_in, lam_out), abs=1e-10)


def test_logpmf_matches_scipy_skellam():
    delta = np.array([[-3, 0], [2, 7]])
    lam_in = np.array([[1.0, 2.0], [4.0, 6.5]])
    lam_out = np.array([[3.0, 2.0], [1.5, 0.7]])
    expected = stats.skellam.logpmf(delta, lam_in, lam_out)
    assert np.allclose(skellam_logpmf(delta, lam_in, lam_out), expected, atol=1e-9)


def test_impossible_difference_has_zero_probability():
    assert skellam_pmf(-2, SkellamParams(1.0, 0.0)) == 0.0
    assert skellam_pmf(3, SkellamParams(0.0, 2.0)) == 0.0
    assert skellam_pmf(0, SkellamParams(0.0, 0.0)) == pytest.approx(1.0)


def test_batch_result_does_not_depend_on_neighbours():
    delta = np.array([2, -40, 0, 150])
    lam_in = np.array([1.0, 3.0, 0.2, 160.0])
    lam_out = np.array([2.0, 45.0, 0.1, 4.0])
    together = skellam_logpmf(delta, lam_in, lam_out)
    alone = [skellam_logpmf(delta[k:k + 1], lam_in[k:k + 1], lam_out[k:k + 1])[0] for k in range(4)]
    assert np.array_equal(together, np.array(alone))


@pytest.mark.parametrize("delta", [-7, 0, 4])
@pytest.mark.parametrize("lam_in,lam_out", [(0.5, 0.5), (5.0, 1.0), (20.0, 20.0)])
def test_truncated_pmf_normalizes(delta, lam_in, lam_out):
    params = SkellamParams(lam_in, lam_out)
    pmf = truncated_joint_pmf(delta, params, choose_imax(delta, params))
    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(pmf.probs >= 0)
    assert pmf.support[0] == max(0, delta)


def test_choose_imax_drops_negligible_tail():
    params = SkellamParams(5.0, 3.0)
    i_max = choose_imax(1, params, tail_tol=1e-10)
    wide = truncated_joint_pmf(1, params, i_max + 200)
    retained = wide.probs[: i_max - 1 + 1].sum()
    assert 1.0 - retained < 1e-9


def test_truncated_pmf_rejects_empty_support():
    with pytest.raises(EmptySupportError):
        truncated_joint_pmf(5, SkellamParams(1.0, 1.0), 4)


def test_truncated_pmf_matches_conditional_mean():
    params = SkellamParams(4.0, 2.0)
    pmf = truncated_joint_pmf(2, params, 80)
    assert pmf.mean_inflow() - pmf.mean_outflow() == pytest.approx(2.0)


def test_conditional_draws_satisfy_difference(rng):
    n = 10_000
    delta = rng.integers(-30, 31, size=n)
    lam_in = rng.uniform(0.0, 40.0, size=n)
    lam_out = rng.uniform(0.0, 40.0, size=n)
    lam_in[::97] = 0.0
    lam_out[::89] = 0.0
    uniforms = 1.0 - rng.random(n)
    inflow, outflow = sample_conditional_batch(delta, lam_in, lam_out, uniforms)
    assert np.array_equal(inflow - outflow, delta)
    assert inflow.min() >= 0 and outflow.min() >= 0


def test_tiny_uniform_selects_smallest_pair():
    inflow, outflow = sample_conditional_batch(np.array([-3, 4]), np.array([2.0, 2.0]), np.array([2.0, 2.0]),
                                               np.array([1e-300, 1e-300]))
    assert inflow.tolist() == [0, 4]
    assert outflow.tolist() == [3, 0]


def test_conditional_draws_follow_truncated_pmf():
    params = SkellamParams(3.0, 2.0)
    pmf = truncated_joint_pmf(1, params, choose_imax(1, params))
    draws = np.random.default_rng(5)
    inflows = np.array([sample_conditional(1, params, draws)[0] for _ in range(4000)])
    assert inflows.mean() == pytest.approx(pmf.mean_inflow(), rel=0.05)


def test_sample_conditional_is_reproducible():
    params = SkellamParams(6.0, 6.0)
    first = [sample_conditional(-2, params, np.random.default_rng(3)) for _ in range(3)]
    second = [sample_conditional(-2, params, np.random.default_rng(3)) for _ in range(3)]
    assert first == second


@pytest.mark.parametrize("delta,lam_in,lam_out", [(-2, 3.0, 4.0), (3, 2.0, 0.5)])
def test_batch_draw_frequencies_match_truncated_pmf(delta, lam_in, lam_out):
    n = 100_000
    rng = np.random.default_rng(11)
    inflow, outflow = sample_conditional_batch(
        np.full(n, delta), np.full(n, lam_in), np.full(n, lam_out), 1.0 - rng.random(n)
    )
    assert np.all(inflow - outflow == delta)
    params = SkellamParams(lam_in, lam_out)
    pmf = truncated_joint_pmf(delta, params, choose_imax(delta, params))
    support = pmf.lower + np.arange(pmf.probs.size)
    assert inflow.min() >= pmf.lower
    assert inflow.max() <= support[-1]
    frequencies = np.bincount(inflow - pmf.lower, minlength=pmf.probs.size)[:pmf.probs.size] / n
    visible = pmf.probs > 1e-3
    std_err = np.sqrt(pmf.probs * (1.0 - pmf.probs) / n)
    assert np.all(np.abs(frequencies - pmf.probs)[visible] <= 4.0 * std_err[visible])
