# SPDX-License-Identifier: Apache-2.0
'''Small statistical helpers shared by the Monte-Carlo checks'''
from typing import Optional, Tuple

import attr
import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import kstest

from stablelan.utils.rng import RNG_TYPE


@attr.s(frozen=True)
class MomentEstimate:
    '''A Monte-Carlo mean with its standard error'''
    value = attr.ib(type=float)
    se = attr.ib(type=float)
    #: number of samples that entered the mean
    size = attr.ib(type=int, default=0)


def mean_se(samples: np.ndarray, axis: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    '''Sample mean and its standard error'''
    samples = np.asarray(samples, dtype=float)
    size = samples.shape[axis]
    if size < 2:
        return samples.mean(axis=axis), np.full_like(samples.mean(axis=axis), np.inf)
    return samples.mean(axis=axis), samples.std(axis=axis, ddof=1) / np.sqrt(size)


def moment_estimate(samples: np.ndarray) -> MomentEstimate:
    '''MomentEstimate of a 1D sample'''
    value, se = mean_se(samples)
    return MomentEstimate(float(value), float(se), int(np.size(samples)))


def log_log_trend(x: np.ndarray, estimates: np.ndarray,
                  ses: Optional[np.ndarray] = None) -> Tuple[float, float]:
    '''Slope (and its standard error) of log(estimate) against log(x).

    The log-estimate errors are propagated by the delta method (se / estimate) and used as
    weights; without them the standard error is scaled by the residuals.
    '''
    x = np.log(np.asarray(x, dtype=float))
    estimates = np.asarray(estimates, dtype=float)
    y = np.log(estimates)
    if np.ptp(x) == 0:
        return 0., np.inf
    if ses is not None:
        sigma = np.maximum(np.asarray(ses, dtype=float) / estimates, 1e-12)
        coefficients, covariance = np.polyfit(x, y, 1, w=1. / sigma, cov='unscaled')
    elif len(x) > 2:
        coefficients, covariance = np.polyfit(x, y, 1, cov=True)
    else:
        # an exact line through two points
        return float(np.polyfit(x, y, 1)[0]), 0.
    return float(coefficients[0]), float(np.sqrt(covariance[0, 0]))


def ks_normal(samples: np.ndarray, variance: float) -> Tuple[float, float]:
    '''One-sample KS statistic and p-value against N(0, variance)'''
    result = kstest(np.asarray(samples, dtype=float) / np.sqrt(variance), 'norm')
    return float(result.statistic), float(result.pvalue)


def energy_statistic(sample: np.ndarray, reference: np.ndarray) -> float:
    '''Two-sample energy distance statistic 2E|X-Y| - E|X-X'| - E|Y-Y'|'''
    return (2. * cdist(sample, reference).mean()
            - cdist(sample, sample).mean() - cdist(reference, reference).mean())


def energy_test_gaussian(sample: np.ndarray, covariance: np.ndarray, rng: RNG_TYPE,
                         reference_size: Optional[int] = None,
                         permutations: int = 199) -> Tuple[float, float]:
    '''Permutation energy test of a d-dimensional sample against N(0, covariance).

    A reference sample is drawn from the Gaussian and the pooled distance matrix is
    permuted.

    Returns:
        (statistic, p-value)
    '''
    sample = np.asarray(sample, dtype=float)
    size = len(sample)
    reference_size = reference_size or size
    reference = rng.multivariate_normal(np.zeros(sample.shape[1]), covariance, reference_size)
    pooled = np.vstack([sample, reference])
    distances = cdist(pooled, pooled)

    def statistic(index):
        first, second = index[:size], index[size:]
        return (2. * distances[np.ix_(first, second)].mean()
                - distances[np.ix_(first, first)].mean()
                - distances[np.ix_(second, second)].mean())

    observed = statistic(np.arange(len(pooled)))
    exceed = sum(statistic(rng.permutation(len(pooled))) >= observed
                 for _ in range(permutations))
    return float(observed), float((exceed + 1) / (permutations + 1))


def frobenius_deviation(estimate: np.ndarray, target: np.ndarray) -> float:
    '''||estimate - target||_F / ||target||_F'''
    return float(np.linalg.norm(np.asarray(estimate) - np.asarray(target))
                 / np.linalg.norm(target))


def tail_share(samples: np.ndarray, fraction: float = 1e-3) -> float:
    '''Share of sum(|samples|) carried by the largest ``fraction`` of the samples'''
    values = np.sort(np.abs(np.asarray(samples, dtype=float)))
    total = values.sum()
    if total == 0:
        return 0.
    top = max(int(np.ceil(fraction * len(values))), 1)
    return float(values[-top:].sum() / total)
