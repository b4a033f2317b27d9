# SPDX-License-Identifier: Apache-2.0
import attr
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import stablelan.malliavin as tested
from stablelan.levy_model import Theta, preset, truncated_moment
from stablelan.malliavin import MalliavinError
from stablelan.simulator import JumpLedger, SamplingScheme
from stablelan.utils.stats import mean_se

STABLE = preset('stable15')


def _ledger(sizes=(.3, -.2, 1.5), times=(.2, .5, .9), small_jumps='omit'):
    return JumpLedger(spec=STABLE, horizon=1., eps=.01, times=np.array(times, dtype=float),
                      sizes=np.array(sizes, dtype=float), intensity=0., compensator=0.,
                      small_variance=truncated_moment(STABLE, 2, 0., .01),
                      small_jumps=small_jumps)


def test_functionals_raw():
    functionals = tested.functionals_from_ledger(_ledger(), STABLE, Theta(0., 2.), 1., 'raw')
    assert_allclose(functionals.d1, 2. * 2.38)
    assert_allclose(functionals.d2, 4. * 3.394)
    # the jump of size 1.5 is above t^(1/alpha) = 1
    assert_allclose(functionals.kappa, .13)
    # chi(u) = (alpha - 1) u for the untapered measure
    assert_allclose(functionals.delta1, .5 * 1.6, atol=1e-12)
    assert_allclose(functionals.z, 1.6, atol=1e-12)
    assert_allclose(functionals.z_tilde, functionals.z)
    assert not functionals.degenerate
    assert not functionals.truncation_biased
    assert not functionals.regime_switch


def test_functionals_mean_patch():
    ledger = _ledger()
    small = truncated_moment(STABLE, 2, 0., .01)
    assert_allclose(small, .2)
    functionals = tested.functionals_from_ledger(ledger, STABLE, Theta(0., 2.), 1.)
    assert_allclose(functionals.d1, 2. * (2.38 + small))
    assert_allclose(functionals.kappa, .13 + small)

    earlier = tested.functionals_from_ledger(ledger, STABLE, Theta(0., 2.), .6, 'raw')
    assert_allclose(earlier.d1, 2. * .13)
    assert_allclose(earlier.delta1, .05, atol=1e-12)


def test_functionals_errors():
    with pytest.raises(MalliavinError, match='patch'):
        tested.functionals_from_ledger(_ledger(), STABLE, Theta(), 1., 'median')
    with pytest.raises(MalliavinError, match='another measure'):
        tested.functionals_from_ledger(_ledger(), preset('cauchy'), Theta(), 1.)
    with pytest.raises(MalliavinError, match='horizon'):
        tested.functionals_from_ledger(_ledger(), STABLE, Theta(), 2.)


def test_modified_weight():
    theta = Theta(0., 2.)
    functionals = tested.functionals_from_ledger(_ledger(), STABLE, theta, 1., 'raw')
    weight = tested.modified_weight(functionals, theta, 1.)
    ratio = .8 / 4.76 + 13.576 / 4.76 ** 2
    assert_allclose(weight.xi_beta, ratio)
    assert_allclose(weight.xi_gamma, 1.6 * ratio - .5)
    assert_allclose(weight.scaled, [ratio, 1.6 * ratio - .5])

    other = tested.modified_weight(functionals, theta, 1., z_t=0.)
    assert_allclose(other.xi_gamma, -.5)
    assert functionals.derivative_ratio <= 2. / np.sqrt(theta.gamma)


def test_modified_weight_degenerate():
    ledger = _ledger(sizes=(), times=())
    functionals = tested.functionals_from_ledger(ledger, STABLE, Theta(), 1., 'raw')
    assert functionals.degenerate
    assert functionals.derivative_ratio == np.inf
    with pytest.raises(MalliavinError, match='Degenerate'):
        tested.modified_weight(functionals, Theta(), 1.)


def test_simulate_weights():
    theta = Theta(0., 1.5)
    sample = tested.simulate_weights(STABLE, theta, .1, 30, seed=2)
    assert sample.xi.shape == (30 - sample.dropped, 2)
    assert sample.requested == 30
    assert sample.drop_rate == sample.dropped / 30
    assert_allclose(sample.eps, .1 * .1 ** (1. / 1.5))
    assert sample.derivative_ratio_max <= 2. / np.sqrt(theta.gamma)
    assert np.all(sample.d1 > 0)
    assert list(sample.to_frame().columns) == ['x', 'z', 'xi_beta', 'xi_gamma', 'd1', 'd2',
                                               'delta1', 'kappa']

    threaded = tested.simulate_weights(STABLE, theta, .1, 30, seed=2, threads=3)
    assert_array_equal(sample.xi, threaded.xi)


def test_check_representation():
    with pytest.raises(MalliavinError, match='samples per bin'):
        tested.check_representation(STABLE, Theta(), .1, 1000, 4)

    report = tested.check_representation(STABLE, Theta(), .1, 2000, 4, seed=5)
    assert len(report.bins) == 4
    assert report.bins['count'].sum() == 2000 - report.dropped
    assert report.fraction_beta >= .5
    assert report.fraction_gamma >= .5
    assert report.derivative_ratio_max <= 2.


def test_kappa_inverse_moments():
    report = tested.kappa_inverse_moments(STABLE, [.1, .01], [0, 1], 50, seed=1)
    frame = report.to_frame()
    assert len(frame) == 4
    assert_allclose(frame.loc[frame.p == 0, 'estimate'], 1.)
    assert np.all(frame.loc[frame.p == 1, 'estimate'] > 0)
    assert {trend['p'] for trend in report.trends} == {0, 1}
    assert next(trend for trend in report.trends if trend['p'] == 0)['passed']


def test_kappa_small_ball_bound():
    assert_allclose(tested.kappa_small_ball_bound(preset('cauchy'), 1., .5), np.exp(-2. / np.pi))


def test_moment_sweep():
    with pytest.raises(MalliavinError, match='delta1'):
        tested.moment_sweep(STABLE, [Theta()], [SamplingScheme(10)], .6, 10)

    report = tested.moment_sweep(STABLE, [Theta()], [SamplingScheme(10), SamplingScheme(20)],
                                 .25, 40, seed=3)
    assert len(report.rows) == 2
    assert len(report.trends) == 1
    assert all(row['estimate'] > 0 for row in report.rows)


def test_ratio_moments():
    report = tested.ratio_moments(STABLE, Theta(), [.1, .01], 1., 40, seed=4)
    assert {row['quantity'] for row in report.rows} == {'scale', 'z_tilde', 'delta1'}
    assert len(report.trends) == 3
    assert all(np.isfinite(row['estimate']) for row in report.rows)


def test_degenerate_paths():
    # with eps above t^(1/alpha) no jump can carry kappa_t: every path is degenerate
    eps = 2. * .1 ** (1. / 1.5)
    with pytest.raises(MalliavinError, match='All 20 paths are degenerate'):
        tested.simulate_weights(STABLE, Theta(), .1, 20, seed=2, eps=eps)
    with pytest.raises(MalliavinError, match='degenerate'):
        tested.check_representation(STABLE, Theta(), .1, 2000, 4, eps=eps)


def test_drop_rate_verdict():
    sample = tested.simulate_weights(STABLE, Theta(), .1, 2000, seed=5)
    assert sample.dropped == 0
    report = tested.check_representation(STABLE, Theta(), .1, 2000, 4, sample=sample)
    assert report.drop_rate == 0

    dropped = attr.evolve(sample, dropped=1, requested=2001)
    failed = tested.check_representation(STABLE, Theta(), .1, 2000, 4, sample=dropped)
    assert_allclose(failed.drop_rate, 1. / 2001)
    assert failed.fraction_beta == report.fraction_beta
    assert failed.fraction_gamma == report.fraction_gamma
    assert not failed.passed
    tolerant = tested.check_representation(STABLE, Theta(), .1, 2000, 4, sample=dropped,
                                           max_drop_rate=1e-3)
    assert tolerant.passed == report.passed

    report = tested.ratio_moments(STABLE, Theta(), [.1, .01], 1., 40, seed=4, max_drop_rate=0.)
    assert report.requested == 80
    assert report.drop_rate == 0
    assert not report.passed
    report = tested.moment_sweep(STABLE, [Theta()], [SamplingScheme(10), SamplingScheme(20)],
                                 .25, 40, seed=3, max_drop_rate=0.)
    assert report.requested >= 80
    assert not report.passed


def test_weight_mean():
    sample = tested.simulate_weights(STABLE, Theta(0., 1.5), .1, 4000, seed=8)
    mean, se = mean_se(sample.xi)
    assert np.all(np.abs(mean) <= 4. * se)
