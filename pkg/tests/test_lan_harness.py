# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest
from numpy.testing import assert_allclose

import stablelan.lan_harness as tested
from stablelan.densities import ZERO_NUISANCE, NuisanceSpec
from stablelan.lan_harness import HarnessError, LanExperimentConfig
from stablelan.levy_model import Theta, preset
from stablelan.score_fisher import perturb, rate_matrices
from stablelan.simulator import SamplingScheme, sample_path

CAUCHY = preset('cauchy')


def test_check_rate_condition():
    verdict = tested.check_rate_condition(.8, SamplingScheme(2000))
    assert verdict.passed
    assert verdict.automatic

    verdict = tested.check_rate_condition(1.5, SamplingScheme(2000))
    assert not verdict.passed
    assert_allclose(verdict.value, 2000 ** (-1. / 6))
    assert tested.check_rate_condition(1.5, SamplingScheme(2000), threshold=.3).passed


def test_config_errors():
    schemes = [SamplingScheme(10)]
    with pytest.raises(HarnessError, match='replications'):
        LanExperimentConfig(CAUCHY, Theta(), schemes, replications=50)
    with pytest.raises(HarnessError, match='sampling scheme'):
        LanExperimentConfig(CAUCHY, Theta(), [])
    with pytest.raises(HarnessError, match='Blumenthal-Getoor'):
        LanExperimentConfig(CAUCHY, Theta(), schemes,
                            nuisances=[NuisanceSpec('stable', alpha_u=1.5)])
    with pytest.raises(HarnessError, match='parameter set'):
        LanExperimentConfig(CAUCHY, Theta(0., .01), [SamplingScheme(4)], vs=[(0., -1.)])


def test_config_defaults():
    config = LanExperimentConfig(CAUCHY, Theta(), [SamplingScheme(10)], vs=[[1, 0]])
    assert config.vs == [(1., 0.)]
    assert config.nuisances == [ZERO_NUISANCE]
    assert config.sampling_method == 'exact'
    assert_allclose(config.eps_for(SamplingScheme(10)), .01)
    assert_allclose(config.sigma(), np.diag([.5, .5]), atol=1e-3)
    tempered = LanExperimentConfig(preset('tempered_exp'), Theta(), [SamplingScheme(10)])
    assert tempered.sampling_method == 'ledger'
    skewed = LanExperimentConfig(preset('asym08'), Theta(.5, 2.), [SamplingScheme(10)])
    assert np.all(np.isfinite(skewed.sigma()))
    assert np.all(np.diag(skewed.sigma()) > 0)


def test_loglik_ratio_delta_n():
    scheme = SamplingScheme(10)
    theta0 = Theta()
    path = sample_path(CAUCHY, theta0, ZERO_NUISANCE, scheme, .01, 0, method='exact')
    assert tested.loglik_ratio(path, CAUCHY, theta0, theta0, ZERO_NUISANCE, scheme) == 0

    delta = tested.delta_n(path, CAUCHY, theta0, ZERO_NUISANCE, scheme)
    assert delta.shape == (2,)
    # Cauchy with gamma = 1: r(n) = n^-1/2 I and the scores are the G functions
    xi = np.diff(path.x_values) / scheme.h
    expected = np.array([np.sum(2 * xi / (1 + xi ** 2)),
                         np.sum(-1 + 2 * xi ** 2 / (1 + xi ** 2))]) / np.sqrt(10)
    assert_allclose(delta, expected, atol=1e-3)

    theta1 = perturb(rate_matrices(CAUCHY, scheme), theta0, [.5, 0.])
    # log ratio of Cauchy densities with shifted location
    shift = theta1.beta * scheme.h
    dx = np.diff(path.x_values)
    exact = np.sum(np.log((scheme.h ** 2 + dx ** 2) / (scheme.h ** 2 + (dx - shift) ** 2)))
    assert_allclose(tested.loglik_ratio(path, CAUCHY, theta0, theta1, ZERO_NUISANCE, scheme),
                    exact, atol=1e-2)


def test_remainder_psi_zero():
    config = LanExperimentConfig(CAUCHY, Theta(), [SamplingScheme(10)], vs=[(0., 0.)],
                                 replications=100)
    path = sample_path(CAUCHY, Theta(), ZERO_NUISANCE, SamplingScheme(10), .01, 0,
                       method='exact')
    assert tested.remainder_psi(path, config, [0., 0.]) == 0


def test_lan_triple():
    config = LanExperimentConfig(CAUCHY, Theta(), [SamplingScheme(10), SamplingScheme(20)],
                                 vs=[(0., 0.)], replications=100, seed=1)
    report = tested.lan_triple(config)
    assert set(report.verdicts) == {'covariance', 'normality', 'off_diagonal', 'interpolation',
                                   'psi'}
    assert report.verdicts['psi']
    assert len(report.deltas) == 2
    assert all(row['psi_median_abs'] == 0 for row in report.psis)
    assert all(row['replications'] == 100 for row in report.deltas)
    assert report.rates[0]['automatic']

    document = report.to_dict()
    assert document['thresholds_are_engineering_choices']
    assert len(report.summary_frame()) == 2


def test_uniform_sweep():
    nuisances = [ZERO_NUISANCE, NuisanceSpec('compound_poisson', rate=5., jump_std=.01)]
    config = LanExperimentConfig(CAUCHY, Theta(), [SamplingScheme(10)], vs=[(0., 0.)],
                                 nuisances=nuisances, replications=100, seed=2)
    report = tested.uniform_sweep(config)
    assert len(report.deltas) == 2
    assert {row['nuisance'] for row in report.deltas} == {n.label for n in nuisances}
    assert 'worst_cov_deviation' in report.uniform
    # the nuisance has its own stream: Z is shared and Delta_n stays correlated
    assert report.uniform['min_delta_correlation'] > .5
    assert 'correlation' in report.verdicts


def test_a3_statistic():
    scheme = SamplingScheme(10)
    with pytest.raises(HarnessError, match='delta1'):
        tested.a3_statistic(CAUCHY, Theta(), ZERO_NUISANCE, scheme, .6, 100)
    estimate = tested.a3_statistic(CAUCHY, Theta(), ZERO_NUISANCE, scheme, .25, 500)
    assert estimate.n == 10
    assert estimate.value > 0
    assert estimate.se > 0


def test_a3_sweep():
    schemes = [SamplingScheme(40), SamplingScheme(10)]
    report = tested.a3_sweep(CAUCHY, Theta(), ZERO_NUISANCE, schemes, .25, 2000, seed=3)
    assert [estimate.n for estimate in report.estimates] == [10, 40]
    ratio, = report.ratios
    assert_allclose(ratio['expected'], .25 ** .125)
    # for the Cauchy law r~(n)^T g_h is the same in law for every n
    assert abs(ratio['ratio'] - ratio['expected']) <= 4 * ratio['se']


def test_martingale_check():
    scheme = SamplingScheme(10)
    theta1 = perturb(rate_matrices(CAUCHY, scheme), Theta(), [.5, .2])
    report = tested.martingale_check(CAUCHY, Theta(), theta1, ZERO_NUISANCE, scheme, 300,
                                     seed=4)
    assert abs(report.mean - 1.) <= 4 * report.se
    assert report.se > 0


def test_interpolation_error():
    assert tested.interpolation_error(CAUCHY, Theta(), ZERO_NUISANCE, .1) < 1e-6


def _delta_row(n, **changes):
    row = {'n': n, 'h': 1. / n, 'nuisance': 'zero', 'cov_deviation': .01, 'ks_p_beta': .5,
           'ks_p_gamma': .5, 'energy_p': .5, 'cov12': 0., 'cov12_se': .01,
           'interpolation_error': 0.}
    row.update(changes)
    return row


def test_verdicts():
    config = LanExperimentConfig(CAUCHY, Theta(), [SamplingScheme(10), SamplingScheme(20)],
                                 vs=[(0., 0.)], replications=100)
    deltas = [_delta_row(10), _delta_row(20)]
    verdicts = tested._verdicts(config, deltas, [])
    assert all(verdicts.values())
    assert 'correlation' not in verdicts

    # the energy test enters the normality verdict
    deltas = [_delta_row(10), _delta_row(20, energy_p=.001)]
    assert not tested._verdicts(config, deltas, [])['normality']
    # only the largest n is judged for normality
    deltas = [_delta_row(10, energy_p=.001), _delta_row(20)]
    assert tested._verdicts(config, deltas, [])['normality']

    # the off-diagonal covariance shrinks to 0 within 2 SE
    deltas = [_delta_row(10, cov12=-.05), _delta_row(20, cov12=.015)]
    assert tested._verdicts(config, deltas, [])['off_diagonal']
    deltas = [_delta_row(10, cov12=.01), _delta_row(20, cov12=.05)]
    assert not tested._verdicts(config, deltas, [])['off_diagonal']
    deltas = [_delta_row(10, cov12=.2), _delta_row(20, cov12=.1)]
    assert not tested._verdicts(config, deltas, [])['off_diagonal']

    deltas = [_delta_row(10), _delta_row(20)]
    assert tested._verdicts(config, deltas, [], {'min_delta_correlation': .95})['correlation']
    assert not tested._verdicts(config, deltas, [], {'min_delta_correlation': .5})['correlation']
    assert not tested._verdicts(config, deltas, [], {})['correlation']


def test_shared_correlation():
    values = np.array([[0., 1.], [1., 3.], [2., 2.], [3., 5.], [4., 4.]])
    first = dict(enumerate(values))
    # replication 1 failed for the second nuisance: pairs are matched by index
    second = {i: 2. * value for i, value in enumerate(values) if i != 1}
    assert_allclose(tested._shared_correlation(first, second), 1.)
    assert tested._shared_correlation(first, {0: values[0], 3: values[3]}) is None
