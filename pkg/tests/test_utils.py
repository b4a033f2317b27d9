# SPDX-License-Identifier: Apache-2.0
import json
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import norm

from stablelan.utils import io, parallel, quadrature, rng, stats


def test_integrate():
    result = quadrature.integrate(lambda x: x ** 2, 0, 1)
    assert_allclose(result.value, 1. / 3, rtol=1e-12)
    assert result.neval > 0

    assert quadrature.integrate(np.exp, 2., 2.).value == 0

    result = quadrature.integrate(lambda x: np.exp(-x), 0, np.inf, weight='cos', wvar=2.)
    assert_allclose(result.value, 1. / 5, rtol=1e-8)


def test_integrate_budget():
    with pytest.raises(quadrature.QuadratureError, match='function evaluations'):
        quadrature.integrate(lambda x: x, 0, 1, max_evaluations=10)


def test_gauss_legendre():
    lower = np.array([0., 1., -2.])
    upper = np.array([1., 3., 2.])
    assert_allclose(quadrature.gauss_legendre(lambda x: x ** 3, lower, upper),
                    (upper ** 4 - lower ** 4) / 4, atol=1e-12)


def test_fourier_grid_gaussian():
    grid = quadrature.FourierGrid([0., 2., 12.], [400, 2000])
    nodes = grid.nodes
    assert len(nodes) == 2401
    assert_allclose(nodes[[0, -1]], [0, 12])
    assert_allclose(grid.lambda_max, 12)
    assert_allclose(grid.top_step, 10. / 2000)

    x = np.linspace(-6, 6, 61)
    spectrum = np.exp(-nodes ** 2 / 2)
    (values, dvalues), = grid.transform([spectrum], x, orders=(0, 1), chunk=16)
    assert_allclose(np.real(values) / np.pi, norm.pdf(x), atol=1e-6)
    assert_allclose(np.real(dvalues) / np.pi, -x * norm.pdf(x), atol=1e-6)


def test_fourier_grid_invalid():
    with pytest.raises(ValueError):
        quadrature.FourierGrid([0., 1.], [3])
    with pytest.raises(ValueError):
        quadrature.FourierGrid([0., 1., 2.], [2])
    with pytest.raises(ValueError):
        quadrature.FourierGrid([0., 2., 1.], [2, 2])


def test_stream():
    first = rng.stream(42, rng.JUMPS, 3).uniform(size=5)
    assert_array_equal(first, rng.stream(42, rng.JUMPS, 3).uniform(size=5))
    assert not np.allclose(first, rng.stream(42, rng.JUMPS, 4).uniform(size=5))
    assert not np.allclose(first, rng.stream(43, rng.JUMPS, 3).uniform(size=5))
    assert not np.allclose(first, rng.stream(42, rng.GAUSS, 3).uniform(size=5))


def test_time_key():
    assert rng.time_key(.5) == rng.time_key(1. / 2)
    assert rng.time_key(.5) != rng.time_key(.25)


def test_map_replications():
    def func(i):
        return rng.stream(0, i).standard_normal()

    assert_array_equal(parallel.map_replications(func, 20),
                       parallel.map_replications(func, 20, threads=4))


def test_to_jsonable():
    assert io.to_jsonable({'a': np.float64(1.5), 'b': np.arange(3), 'c': np.nan,
                           'd': (np.int64(2), np.bool_(True)), 'e': Path('x')}) == {
        'a': 1.5, 'b': [0, 1, 2], 'c': None, 'd': [2, True], 'e': 'x'}


def test_config_hash():
    assert io.canonical_json({'b': 1, 'a': [1, 2]}) == '{"a":[1,2],"b":1}'
    assert io.config_hash({'a': 1, 'b': 2}) == io.config_hash({'b': 2, 'a': 1})
    assert io.config_hash({'a': 1}) != io.config_hash({'a': 2})


def test_write_json_csv():
    with TemporaryDirectory(prefix='test-io') as folder:
        folder = Path(folder)
        path = io.write_json(folder / 'sub' / 'report.json', {'value': np.float64(2.)},
                             {'seed': 3}, 3)
        with path.open(encoding='utf-8') as file_:
            document = json.load(file_)
        assert document == {'value': 2., 'schema_version': io.SCHEMA_VERSION,
                            'config_hash': io.config_hash({'seed': 3}), 'seed': 3}

        io.write_csv(folder / 'table.csv', pd.DataFrame({'x': [1., 2.], 'y': [3., 4.]}),
                     {'seed': 3}, 3)
        assert_array_equal(pd.read_csv(folder / 'table.csv').values, [[1, 3], [2, 4]])
        with (folder / 'table.meta.json').open(encoding='utf-8') as file_:
            meta = json.load(file_)
        assert meta['rows'] == 2
        assert meta['columns'] == ['x', 'y']
        assert meta['seed'] == 3


def test_mean_se():
    mean, se = stats.mean_se(np.array([1., 2., 3., 4.]))
    assert_allclose(mean, 2.5)
    assert_allclose(se, np.std([1., 2., 3., 4.], ddof=1) / 2)

    estimate = stats.moment_estimate(np.ones(10))
    assert estimate.value == 1
    assert estimate.se == 0
    assert estimate.size == 10


def test_log_log_trend():
    x = np.array([1., 10., 100., 1000.])
    slope, se = stats.log_log_trend(x, 3. * x ** 2)
    assert_allclose(slope, 2.)
    assert se < 1e-8

    slope, se = stats.log_log_trend(x, x ** -.5, ses=.01 * x ** -.5)
    assert_allclose(slope, -.5)
    assert se > 0

    # equal relative errors: se = sigma / sqrt(sum (log x - mean)^2)
    _, se = stats.log_log_trend(x, x, ses=.1 * x)
    logs = np.log(x)
    assert_allclose(se, .1 / np.sqrt(np.sum((logs - logs.mean()) ** 2)))
    assert stats.log_log_trend([2., 2.], [1., 3.]) == (0., np.inf)


def test_ks_normal():
    sample = rng.stream(1).normal(0, 2., 2000)
    _, pvalue = stats.ks_normal(sample, 4.)
    assert pvalue > 1e-3
    _, pvalue = stats.ks_normal(sample, 1.)
    assert pvalue < 1e-6


def test_energy_test_gaussian():
    generator = rng.stream(2)
    cov = np.diag([1., 2.])
    sample = generator.multivariate_normal([0, 0], cov, 100)
    statistic, pvalue = stats.energy_test_gaussian(sample, cov, generator, permutations=99)
    assert statistic > -1e-12
    assert 0 < pvalue <= 1

    _, pvalue = stats.energy_test_gaussian(sample + 3., cov, generator, permutations=99)
    assert pvalue == 1. / 100

    # centered samples with heavy tails or two modes
    heavy = generator.standard_cauchy((300, 2))
    _, pvalue = stats.energy_test_gaussian(heavy, np.eye(2), generator, permutations=99)
    assert pvalue <= .05
    bimodal = generator.choice([-1., 1.], (300, 2)) + .1 * generator.standard_normal((300, 2))
    _, pvalue = stats.energy_test_gaussian(bimodal, np.eye(2), generator, permutations=99)
    assert pvalue <= .05


def test_frobenius_tail_share():
    assert_allclose(stats.frobenius_deviation(np.diag([1.1, 1.]), np.eye(2)), .1 / np.sqrt(2))
    assert_allclose(stats.tail_share(np.r_[np.ones(999), 1001.]), 1001. / 2000)
    assert stats.tail_share(np.zeros(5)) == 0
