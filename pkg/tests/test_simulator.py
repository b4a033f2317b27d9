# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import cauchy, kstest

import stablelan.simulator as tested
from stablelan.densities import ZERO_NUISANCE, NuisanceSpec, limit_density
from stablelan.levy_model import LevyMeasureSpec, Theta, c_t, preset, tail_mass
from stablelan.simulator import SamplingScheme, SimulationError
from stablelan.utils.rng import EXACT, stream


def test_sampling_scheme():
    scheme = SamplingScheme(2000)
    assert scheme.h == 1. / 2000
    assert_allclose(scheme.rate_value(1.5), 2000 ** (-1. / 6))
    assert_allclose(scheme.rate_value(1.5), .2817, atol=1e-4)
    assert not scheme.valid(1.5)
    assert scheme.valid(1.5, threshold=.3)
    assert scheme.valid(.8)
    assert len(scheme.times) == 2001
    assert_allclose(SamplingScheme(10, .01).horizon, .1)

    with pytest.raises(SimulationError):
        SamplingScheme(0)
    with pytest.raises(SimulationError):
        SamplingScheme(10, 2.)


def test_sample_ledger_reproducible():
    spec = preset('cauchy')
    first = tested.sample_ledger(spec, 1., .1, seed=3, key=(1,))
    second = tested.sample_ledger(spec, 1., .1, seed=3, key=(1,))
    assert_array_equal(first.sizes, second.sizes)
    assert_array_equal(first.times, second.times)
    other = tested.sample_ledger(spec, 1., .1, seed=3, key=(2,))
    assert not (len(other.sizes) == len(first.sizes) and np.allclose(other.sizes, first.sizes))


def test_sample_ledger_cauchy():
    spec = preset('cauchy')
    assert_allclose(tested.expected_jump_count(spec, 1., .1), 20. / np.pi)

    ledgers = [tested.sample_ledger(spec, 1., .1, seed=0, key=(i,)) for i in range(2000)]
    counts = np.array([ledger.count for ledger in ledgers])
    assert abs(counts.mean() - 20. / np.pi) < 4 * np.sqrt(20. / np.pi / len(counts))

    sizes = np.concatenate([ledger.sizes for ledger in ledgers])
    assert np.all(np.abs(sizes) > .1)
    assert np.all(np.diff(ledgers[0].times) >= 0)
    # |u| given |u| > eps is Pareto(1) above eps
    _, pvalue = kstest(.1 / np.abs(sizes), 'uniform')
    assert pvalue > 1e-3

    ledger = ledgers[0]
    assert_allclose(ledger.intensity, 20. / np.pi)
    assert_allclose(ledger.compensator, 0., atol=1e-14)
    assert_allclose(ledger.small_variance, 2. / np.pi * .1)


def test_sample_ledger_tempered():
    spec = preset('tempered_exp')
    ledger = tested.sample_ledger(spec, 2000., .5, seed=1)
    magnitudes = np.abs(ledger.sizes)
    assert np.all(magnitudes > .5)
    share = np.mean(magnitudes > 1.)
    expected = tail_mass(spec, 1.) / tail_mass(spec, .5)
    assert abs(share - expected) < 4 * np.sqrt(expected * (1 - expected) / len(magnitudes))
    assert_allclose(ledger.count / 2000., tail_mass(spec, .5), rtol=.1)


def test_sample_ledger_asymmetric():
    spec = preset('asym08')
    ledger = tested.sample_ledger(spec, 10., .05, seed=2)
    assert np.all(ledger.sizes > 0)
    assert ledger.compensator > 0


def test_sample_ledger_errors():
    spec = preset('cauchy')
    with pytest.raises(SimulationError, match='budget'):
        tested.sample_ledger(spec, 1., 1e-9, seed=0)
    with pytest.raises(SimulationError):
        tested.sample_ledger(spec, 1., 0., seed=0)
    with pytest.raises(SimulationError):
        tested.sample_ledger(spec, -1., .1, seed=0)
    with pytest.raises(SimulationError, match='small jump mode'):
        tested.sample_ledger(spec, 1., .1, seed=0, small_jumps='poisson')


def test_z_from_ledger():
    spec = preset('stable15')
    ledger = tested.sample_ledger(spec, 1., .05, seed=4, small_jumps='omit')
    assert tested.z_from_ledger(ledger, 0.) == 0
    assert_allclose(tested.z_from_ledger(ledger, 1.), ledger.sizes.sum(), atol=1e-12)
    half = ledger.sizes[ledger.times <= .5].sum()
    assert_allclose(tested.z_at(ledger, [.5])[0], half, atol=1e-12)
    with pytest.raises(SimulationError):
        tested.z_from_ledger(ledger, 1.5)


def test_brownian_surrogate():
    spec = preset('stable15')
    grid = np.linspace(0, 1, 11)
    ledger = tested.sample_ledger(spec, 1., .05, seed=5, grid_times=grid)
    assert_array_equal(ledger.brownian(grid), ledger.grid_brownian)
    assert ledger.brownian(grid)[0] == 0
    # off-grid values only depend on the time
    assert_array_equal(ledger.brownian([.55]), ledger.brownian([.55, .25])[:1])

    with_gauss = tested.z_at(ledger, grid)
    omitted = tested.z_at(tested.sample_ledger(spec, 1., .05, seed=5, grid_times=grid,
                                               small_jumps='omit'), grid)
    assert_allclose(with_gauss - omitted, np.sqrt(ledger.small_variance) * ledger.grid_brownian)
    assert_allclose(ledger.bias_bound(.5), .5 * ledger.small_variance)


def test_truncation_biased():
    spec = preset('stable15')
    ledger = tested.sample_ledger(spec, 1., .05, seed=0)
    assert ledger.truncation_biased(.001)
    assert not ledger.truncation_biased(.5)
    assert ledger.to_dict()['eps'] == .05


def test_stable_rvs_cauchy():
    draws = tested.stable_rvs(1., 1. / np.pi, 1. / np.pi, 5000, stream(0))
    _, pvalue = kstest(draws, cauchy.cdf)
    assert pvalue > 1e-3


@pytest.mark.parametrize('alpha,c_plus,c_minus', [(1.5, .5, .5), (.8, 1., 0.),
                                                  (1., 1., .3)])
def test_stable_rvs_density(alpha, c_plus, c_minus):
    table = limit_density(alpha, c_plus, c_minus, np.linspace(-60, 60, 2401))
    draws = tested.stable_rvs(alpha, c_plus, c_minus, 4000, stream(1))
    _, pvalue = tested.ks_to_density(draws, table)
    assert pvalue > 1e-3


def test_sample_nuisance_increments():
    generator = stream(2)
    assert_array_equal(tested.sample_nuisance_increments(ZERO_NUISANCE, .1, 5, generator),
                       np.zeros(5))
    increments = tested.sample_nuisance_increments(
        NuisanceSpec('compound_poisson', rate=1., jump_std=2.), .01, 10000, generator)
    assert np.mean(increments != 0) < .02
    laplace = tested.sample_nuisance_increments(
        NuisanceSpec('compound_poisson', rate=100., jump_std=1., jump_law='laplace'), .1,
        10000, generator)
    assert_allclose(laplace.var(), 10., rtol=.1)
    stable = tested.sample_nuisance_increments(NuisanceSpec('stable', alpha_u=.5), .01, 100,
                                               generator)
    assert stable.shape == (100,)


def test_sample_path_exact():
    spec = preset('stable15')
    theta = Theta(.5, 2.)
    scheme = SamplingScheme(50)
    path = tested.sample_path(spec, theta, ZERO_NUISANCE, scheme, eps=.01, seed=7, key=(3,),
                              method='exact')
    assert path.ledger is None
    assert path.x_values[0] == 0
    assert len(path.x_values) == 51
    xi = tested.normalized_increments(path, spec, theta, scheme)
    assert_allclose(xi, tested.stable_rvs(1.5, .5, .5, 50, stream(7, EXACT, 3)), atol=1e-8)
    assert list(path.to_frame().columns) == ['time', 'z', 'u', 'x']


def test_sample_path_ledger():
    spec = preset('tempered_exp')
    theta = Theta(0., 1.)
    scheme = SamplingScheme(20)
    path = tested.sample_path(spec, theta, ZERO_NUISANCE, scheme, eps=.01, seed=0)
    assert path.method == 'ledger'
    assert_allclose(path.z_values, tested.z_at(path.ledger, scheme.times))
    assert_allclose(path.x_values, path.z_values)

    again = tested.sample_path(spec, theta, ZERO_NUISANCE, scheme, eps=.01, seed=0)
    assert_array_equal(path.x_values, again.x_values)


def test_sample_path_nuisance():
    spec = preset('cauchy')
    scheme = SamplingScheme(20)
    nuisance = NuisanceSpec('compound_poisson', rate=50., jump_std=1.)
    clean = tested.sample_path(spec, Theta(), ZERO_NUISANCE, scheme, .01, seed=1,
                               method='exact')
    noisy = tested.sample_path(spec, Theta(), nuisance, scheme, .01, seed=1, method='exact')
    # the nuisance has its own stream: Z is unchanged
    assert_array_equal(clean.z_values, noisy.z_values)
    assert_allclose(noisy.x_values, noisy.z_values + noisy.u_values)


def test_sample_path_errors():
    scheme = SamplingScheme(20)
    with pytest.raises(SimulationError, match='exact sampler'):
        tested.sample_path(preset('tempered_exp'), Theta(), ZERO_NUISANCE, scheme, .01, 0,
                           method='exact')
    with pytest.raises(SimulationError, match='Unknown method'):
        tested.sample_path(preset('cauchy'), Theta(), ZERO_NUISANCE, scheme, .01, 0,
                           method='euler')
    with pytest.raises(SimulationError, match='Invalid scheme'):
        tested.sample_path(preset('stable15'), Theta(), ZERO_NUISANCE, SamplingScheme(2000),
                           .01, 0, method='exact', rate_threshold=.2)


def test_normalized_increments_mismatch():
    spec = LevyMeasureSpec(.5, 1., 0.)
    scheme = SamplingScheme(10, .01)
    path = tested.sample_path(spec, Theta(1., 2.), ZERO_NUISANCE, scheme, .001, 0,
                              method='exact')
    xi = tested.normalized_increments(path, spec, Theta(1., 2.), scheme)
    assert_allclose(np.diff(path.z_values), .01 ** 2 * xi - c_t(spec, .01), atol=1e-10)
    with pytest.raises(SimulationError):
        tested.normalized_increments(path, spec, Theta(1., 3.), scheme)
    with pytest.raises(SimulationError):
        tested.normalized_increments(path, spec, Theta(1., 2.), SamplingScheme(10))
