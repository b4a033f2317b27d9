# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest
from numpy.testing import assert_allclose

import stablelan.score_fisher as tested
from stablelan.densities import ZERO_NUISANCE, DensityError, transition_density
from stablelan.levy_model import LevyMeasureSpec, Theta, c_t, preset
from stablelan.simulator import SamplingScheme
from stablelan.utils.rng import stream

CAUCHY = (1., 1. / np.pi, 1. / np.pi)


def test_fisher_matrix_cauchy():
    fisher = tested.fisher_matrix(*CAUCHY)
    assert_allclose(fisher.sigma11, .5, atol=1e-3)
    assert_allclose(fisher.sigma22, .5, atol=1e-3)
    assert_allclose(fisher.matrix, np.diag([fisher.sigma11, fisher.sigma22]))
    assert fisher.to_dict()['sigma12'] == 0

    rescaled = tested.fisher_matrix(*CAUCHY, gamma=2.)
    assert_allclose(rescaled.sigma11, fisher.sigma11 / 4)
    assert_allclose(rescaled.sigma22, .125, atol=1e-3)
    assert rescaled.gamma == 2

    with pytest.raises(DensityError):
        tested.fisher_matrix(*CAUCHY, gamma=0.)


def test_fisher_matrix_stable():
    fisher = tested.fisher_matrix(1.5, .5, .5)
    assert fisher.sigma11 > 0
    assert fisher.sigma22 > 0
    assert all(r2 >= tested.TAIL_R2 for r2 in fisher.tail_r2.values())


def test_fisher_matrix_mc():
    fisher = tested.fisher_matrix(*CAUCHY)
    covariance, ses = tested.fisher_matrix_mc(*CAUCHY, gamma=1., size=4000, rng=stream(11))
    assert abs(covariance[0, 0] - fisher.sigma11) < 4 * ses[0, 0] + 1e-3
    assert abs(covariance[1, 1] - fisher.sigma22) < 4 * ses[1, 1] + 1e-3
    assert abs(covariance[0, 1]) < 4 * ses[0, 1] + 1e-3


def test_fisher_matrix_skewed():
    # totally skewed law: phi vanishes on part of the left half line
    fisher = tested.fisher_matrix(.8, 1., 0.)
    assert np.all(np.isfinite(fisher.matrix))
    assert fisher.sigma11 > 0
    assert fisher.sigma22 > 0
    assert set(fisher.tail_r2) == {'right'}

    covariance, ses = tested.fisher_matrix_mc(.8, 1., 0., gamma=1., size=10000, rng=stream(12))
    assert abs(covariance[0, 0] - fisher.sigma11) < 4 * ses[0, 0] + 1e-2 * fisher.sigma11
    assert abs(covariance[1, 1] - fisher.sigma22) < 4 * ses[1, 1] + 1e-2 * fisher.sigma22


def test_rate_matrices():
    scheme = SamplingScheme(100)
    rates = tested.rate_matrices(preset('stable15'), scheme)
    assert_allclose(rates.r, np.diag([100 ** -.5 * .01 ** (-1. / 3), .1]))
    assert_allclose(rates.r_tilde, np.sqrt(100) * rates.r)
    assert rates.c_h == 0

    spec = LevyMeasureSpec(.5, 1., 0.)
    scheme = SamplingScheme(10, .01)
    rates = tested.rate_matrices(spec, scheme)
    assert_allclose(rates.r_tilde[0, 1], c_t(spec, .01) / .01)
    assert_allclose(rates.r_tilde[0, 0], .01)
    assert rates.r_tilde[1, 0] == 0
    assert_allclose(rates.r @ rates.r_inverse, np.eye(2), atol=1e-12)


def test_perturb_local_parameter():
    spec = LevyMeasureSpec(.5, 1., 0.)
    rates = tested.rate_matrices(spec, SamplingScheme(10, .01))
    theta0 = Theta(1., 2.)
    theta = tested.perturb(rates, theta0, [.3, -.2])
    assert_allclose(tested.local_parameter(rates, theta0, theta), [.3, -.2])
    assert tested.perturb(rates, theta0, [0., 0.]) == theta0


def test_g_functions_limit_cauchy():
    z = np.linspace(-5, 5, 101)
    tables = tested.g_functions_limit(*CAUCHY, z)
    assert_allclose(tables.g1, 2 * z / (1 + z ** 2), atol=1e-4)
    assert_allclose(tables.g2, -1 + 2 * z ** 2 / (1 + z ** 2), atol=1e-4)
    assert list(tables.to_frame().columns) == ['z', 'g1', 'g2']


def test_g_functions_cauchy():
    z = np.linspace(-3, 3, 31)
    tables = tested.g_functions(preset('cauchy'), Theta(), ZERO_NUISANCE, .1, z)
    assert_allclose(tables.g1, 2 * z / (1 + z ** 2), atol=1e-4)
    assert tables.t == .1


def test_score_cauchy():
    x = np.array([0., 1., -2.])
    expected = np.column_stack([2 * x / (1 + x ** 2), -1 + 2 * x ** 2 / (1 + x ** 2)])
    assert_allclose(tested.score(preset('cauchy'), Theta(), ZERO_NUISANCE, 1., x), expected,
                    atol=1e-4)
    assert_allclose(tested.score(preset('cauchy'), Theta(), ZERO_NUISANCE, 1., 1.),
                    expected[1], atol=1e-4)

    # X_t = gamma Z_t is Cauchy with scale gamma t
    model = tested.score_model(preset('cauchy'), Theta(0., 2.), ZERO_NUISANCE, .5)
    logs, floored = model.log_density(np.array([0., 1.]))
    assert_allclose(logs, np.log(1. / np.pi / (1. + np.array([0., 1.]) ** 2)), atol=1e-4)
    assert not floored.any()


def test_normalized_score():
    spec = preset('stable15')
    scheme = SamplingScheme(100)
    rates = tested.rate_matrices(spec, scheme)
    model = tested.score_model(spec, Theta(), ZERO_NUISANCE, scheme.h)
    x = np.array([-.01, .002, .03])
    assert_allclose(model.normalized_score(x, rates), model.score(x) @ rates.r_tilde)
    g1, g2 = model.g_normalized(model.standardize(x))
    # with c_h = 0: Gamma = (G^1, G^2)
    assert_allclose(model.normalized_score(x, rates), np.column_stack([g1, g2]), rtol=1e-10)


@pytest.mark.parametrize('spec,theta,t', [(preset('cauchy'), Theta(0., 1.), .5),
                                          (preset('tempered_exp'), Theta(.3, 1.5), .1),
                                          (LevyMeasureSpec(.5, 1., 0.), Theta(.2, 2.), .1)])
def test_score_finite_difference(spec, theta, t):
    '''The score is the theta gradient of the log of the directly inverted density'''
    # the skewed measure carries a nonzero centering drift c_t
    assert spec.symmetric or c_t(spec, t) != 0
    scale = theta.gamma * t ** (1. / spec.alpha)
    x = theta.beta * t - theta.gamma * c_t(spec, t) + scale * np.linspace(-8., 24., 129)
    p = transition_density(spec, theta, ZERO_NUISANCE, t, x).values
    x = x[p >= 1e-2 * p.max()]
    assert len(x) >= 10

    expected = tested.score(spec, theta, ZERO_NUISANCE, t, x)
    steps = [1e-4 * scale / t, 1e-4 * theta.gamma]
    for j, step in enumerate(steps):
        shift = step * np.eye(2)[j]
        up = transition_density(spec, Theta.from_array(theta.as_array() + shift),
                                ZERO_NUISANCE, t, x).values
        down = transition_density(spec, Theta.from_array(theta.as_array() - shift),
                                  ZERO_NUISANCE, t, x).values
        numeric = (np.log(up) - np.log(down)) / (2 * step)
        assert_allclose(expected[:, j], numeric, rtol=1e-3, atol=1e-3 * np.abs(numeric).max())
