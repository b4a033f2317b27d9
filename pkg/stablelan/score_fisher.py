# SPDX-License-Identifier: Apache-2.0
'''Scores, normalized score functions, the asymptotic Fisher matrix and the rate matrices'''
import logging
from functools import lru_cache
from typing import Optional, Tuple

import attr
import numpy as np
import pandas as pd
from scipy.integrate import simpson, trapezoid
from scipy.stats import linregress

from stablelan.densities import (LOG_FLOOR, ZERO_NUISANCE, DensityError, DensityTable,
                                 InversionSettings, KernelModel, NuisanceSpec, default_z_grid,
                                 limit_density, psi_handle, reference_frequency)
from stablelan.levy_model import LevyMeasureSpec, Theta, c_t
from stablelan.simulator import SamplingScheme, stable_rvs
from stablelan.utils.rng import RNG_TYPE

L = logging.getLogger('stablelan')

#: the Fisher integrals are truncated where phi drops below this fraction of its peak
WINDOW_FLOOR = 1e-12
#: minimal R^2 of the log-log fit of the tails
TAIL_R2 = .99
#: reach of the limit table, in units of the inverse reference frequency
DEFAULT_REACH = 1e4
MAX_WIDENINGS = 2


@attr.s(frozen=True)
class RateMatrices:
    '''r(n) and r~(n) = sqrt(n) r(n)'''
    r = attr.ib(type=np.ndarray, eq=False)
    r_tilde = attr.ib(type=np.ndarray, eq=False)
    n = attr.ib(type=int)
    h = attr.ib(type=float)
    c_h = attr.ib(type=float)

    @property
    def r_inverse(self) -> np.ndarray:
        '''r(n)^-1'''
        return np.linalg.inv(self.r)


def rate_matrices(spec: LevyMeasureSpec, scheme: SamplingScheme) -> RateMatrices:
    '''r(n) = n^-1/2 [[h^(1/alpha - 1), c_h / h], [0, 1]]'''
    h = scheme.h
    c_h = c_t(spec, h)
    r_tilde = np.array([[h ** (1. / spec.alpha - 1.), c_h / h],
                        [0., 1.]])
    return RateMatrices(r_tilde / np.sqrt(scheme.n), r_tilde, scheme.n, h, c_h)


def local_parameter(rates: RateMatrices, theta0: Theta, theta: Theta) -> np.ndarray:
    '''v = r(n)^-1 (theta - theta0)'''
    return np.linalg.solve(rates.r, theta.as_array() - theta0.as_array())


def perturb(rates: RateMatrices, theta0: Theta, v) -> Theta:
    '''theta0 + r(n) v'''
    return Theta.from_array(theta0.as_array() + rates.r @ np.asarray(v, dtype=float))


@attr.s(frozen=True)
class FisherMatrix:
    '''The diagonal asymptotic Fisher matrix Sigma(theta)'''
    sigma11 = attr.ib(type=float)
    sigma22 = attr.ib(type=float)
    #: quadrature error estimates
    error11 = attr.ib(type=float, default=0.)
    error22 = attr.ib(type=float, default=0.)
    gamma = attr.ib(type=float, default=1.)
    #: R^2 of the tail fits that entered the tail corrections, per side
    tail_r2 = attr.ib(type=dict, factory=dict, eq=False)

    @property
    def matrix(self) -> np.ndarray:
        '''The 2x2 matrix'''
        return np.diag([self.sigma11, self.sigma22])

    def rescaled(self, gamma: float) -> 'FisherMatrix':
        '''The same matrix at another gamma'''
        factor = (self.gamma / gamma) ** 2
        return attr.evolve(self, sigma11=self.sigma11 * factor, sigma22=self.sigma22 * factor,
                           error11=self.error11 * factor, error22=self.error22 * factor,
                           gamma=gamma)

    def to_dict(self) -> dict:
        '''JSON friendly form'''
        return {'sigma11': self.sigma11, 'sigma22': self.sigma22, 'sigma12': 0.,
                'error11': self.error11, 'error22': self.error22, 'gamma': self.gamma,
                'tail_r2': self.tail_r2}


def limit_table(alpha: float, c_plus: float, c_minus: float, reach: float = DEFAULT_REACH,
                settings: Optional[InversionSettings] = None) -> DensityTable:
    '''phi_{alpha,C+-} on a grid scaled by its reference frequency'''
    settings = settings or InversionSettings()
    lambda_s = reference_frequency(psi_handle(LevyMeasureSpec(alpha, c_plus, c_minus)),
                                   settings.max_doublings)
    return limit_density(alpha, c_plus, c_minus, default_z_grid(lambda_s, reach=reach), settings)


def _tail_fit(x: np.ndarray, values: np.ndarray) -> float:
    '''R^2 of log phi against log |x| over the outer decade'''
    magnitude = np.abs(x)
    outer = magnitude >= magnitude.max() / 10.
    if outer.sum() < 3:
        return 0.
    return float(linregress(np.log(magnitude[outer]), np.log(values[outer])).rvalue ** 2)


def _fisher_integrals(table: DensityTable, alpha: float, c_plus: float, c_minus: float):
    x, phi, dphi = table.x_grid, table.values, table.dvalues
    # zero where phi was clipped or lost in the inversion noise, the window can have holes
    inside = phi >= WINDOW_FLOOR * table.peak
    score = np.divide(dphi, phi, out=np.zeros_like(phi), where=inside)
    integrand11 = np.where(inside, score ** 2 * phi, 0.)
    integrand22 = np.where(inside, (1. + x * score) ** 2 * phi, 0.)

    sigma11, sigma22 = simpson(integrand11, x=x), simpson(integrand22, x=x)
    error11 = abs(sigma11 - trapezoid(integrand11, x=x))
    error22 = abs(sigma22 - trapezoid(integrand22, x=x))

    # power tails phi ~ A |x|^-p beyond the grid, on the sides the measure charges
    p = alpha + 1.
    fits = {}
    for side, index, constant in (('left', 0, c_minus), ('right', -1, c_plus)):
        if constant == 0 or not inside[index]:
            continue
        half = (x < 0 if side == 'left' else x > 0) & inside
        fits[side] = _tail_fit(x[half], phi[half])
        edge, value = abs(x[index]), phi[index]
        sigma11 += p ** 2 * value / (edge * (p + 1.))
        sigma22 += (p - 1.) * value * edge
    return float(sigma11), float(sigma22), float(error11), float(error22), fits


@lru_cache(maxsize=64)
def _unit_fisher(alpha: float, c_plus: float, c_minus: float,
                 settings: Optional[InversionSettings]) -> FisherMatrix:
    reach = DEFAULT_REACH
    for attempt in range(MAX_WIDENINGS + 1):
        table = limit_table(alpha, c_plus, c_minus, reach, settings)
        sigma11, sigma22, error11, error22, fits = _fisher_integrals(table, alpha, c_plus,
                                                                     c_minus)
        if all(r2 >= TAIL_R2 for r2 in fits.values()) or attempt == MAX_WIDENINGS:
            break
        L.warning('Fisher tail model fit R^2=%s below %s, retrying with reach %g',
                  fits, TAIL_R2, reach * 10.)
        reach *= 10.
    return FisherMatrix(sigma11, sigma22, error11, error22, 1., fits)


def fisher_matrix(alpha: float, c_plus: float, c_minus: float, gamma: float = 1.,
                  settings: Optional[InversionSettings] = None) -> FisherMatrix:
    '''Sigma(theta) = gamma^-2 diag(int (phi'/phi)^2 phi, int (1 + x phi'/phi)^2 phi)

    The integrals are computed once per (alpha, C+-) at gamma = 1 and rescaled.
    '''
    if gamma <= 0:
        raise DensityError(f'gamma must be > 0, got {gamma}')
    return _unit_fisher(float(alpha), float(c_plus), float(c_minus), settings).rescaled(gamma)


@attr.s(frozen=True, eq=False)
class GTables:
    '''The normalized score functions G^1, G^2 on a grid'''
    z = attr.ib(type=np.ndarray)
    g1 = attr.ib(type=np.ndarray)
    g2 = attr.ib(type=np.ndarray)
    #: the time, or 'limit'
    t = attr.ib(default='limit')

    def to_frame(self) -> pd.DataFrame:
        '''Columns z, g1, g2'''
        return pd.DataFrame({'z': self.z, 'g1': self.g1, 'g2': self.g2})


def _g_from_kernels(f: np.ndarray, f1: np.ndarray, f2: np.ndarray,
                    peak: float) -> Tuple[np.ndarray, np.ndarray]:
    if np.any(f < LOG_FLOOR * peak):
        raise DensityError('score undefined at numerical zero')
    return -f1 / f, -1. - f2 / f


class ScoreModel:
    '''Vectorized scores and log-densities of X_t for one (spec, theta, nuisance, t)'''

    def __init__(self, spec: LevyMeasureSpec, theta: Theta,
                 nuisance: NuisanceSpec = ZERO_NUISANCE, t: float = 1.,
                 settings: Optional[InversionSettings] = None,
                 z_grid: Optional[np.ndarray] = None):
        self.spec = spec
        self.theta = theta
        self.nuisance = nuisance
        self.t = t
        self.model = KernelModel(spec, theta, nuisance, t, settings)
        self.tables = self.model.tables(z_grid)
        self.c_t = c_t(spec, t)
        #: gamma^-1 t^(-1/alpha)
        self.s = self.model.s

    def standardize(self, x) -> np.ndarray:
        '''z = gamma^-1 t^-1/alpha (x - beta t + gamma c_t)'''
        return self.s * (np.asarray(x, dtype=float) - self.theta.beta * self.t
                         + self.theta.gamma * self.c_t)

    def g_normalized(self, z) -> Tuple[np.ndarray, np.ndarray]:
        '''(G^1, G^2) at standardized points'''
        f, f1, f2 = self.tables.evaluate(np.atleast_1d(z))
        return _g_from_kernels(f, f1, f2, self.tables.f.peak)

    def score(self, x) -> np.ndarray:
        '''g_t(theta; x), shape (len(x), 2)'''
        g1, g2 = self.g_normalized(self.standardize(np.atleast_1d(x)))
        gamma, alpha, t = self.theta.gamma, self.spec.alpha, self.t
        beta_part = gamma ** -1 * t ** (1. - 1. / alpha) * g1
        gamma_part = gamma ** -1 * (g2 - self.c_t * t ** (-1. / alpha) * g1)
        return np.column_stack([beta_part, gamma_part])

    def normalized_score(self, x, rates: RateMatrices) -> np.ndarray:
        '''Gamma = r~(n)^T g_h(theta; x), shape (len(x), 2)'''
        return self.score(x) @ rates.r_tilde

    def log_density(self, x) -> Tuple[np.ndarray, np.ndarray]:
        '''log p_t(theta; x) and the mask of floored points'''
        logs, floored = self.tables.f.log_density(self.standardize(np.atleast_1d(x)))
        return logs + np.log(self.s), floored


@lru_cache(maxsize=32)
def score_model(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec, t: float,
                settings: Optional[InversionSettings] = None) -> ScoreModel:
    '''Cached ScoreModel'''
    L.debug('Building score tables for %s, %s, %s, t=%g', spec, theta, nuisance.label, t)
    return ScoreModel(spec, theta, nuisance, t, settings)


def score(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec, t: float, x,
          settings: Optional[InversionSettings] = None) -> np.ndarray:
    '''g_t(theta; x) = grad_theta log p_t(theta; x): a 2-vector, or (len(x), 2) for arrays'''
    out = score_model(spec, theta, nuisance, t, settings).score(x)
    return out[0] if np.ndim(x) == 0 else out


def g_functions(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec, t: float,
                z_grid: np.ndarray, settings: Optional[InversionSettings] = None) -> GTables:
    '''G_{alpha,t}^1 = -f^(1) / f and G_{alpha,t}^2 = -1 - f^(2) / f on z_grid'''
    z_grid = np.asarray(z_grid, dtype=float)
    values = KernelModel(spec, theta, nuisance, t, settings).evaluate(z_grid)
    g1, g2 = _g_from_kernels(values.f, values.f1, values.f2, np.max(values.f))
    return GTables(z_grid, g1, g2, t)


def g_functions_limit(alpha: float, c_plus: float, c_minus: float, z_grid: np.ndarray,
                      settings: Optional[InversionSettings] = None) -> GTables:
    '''G^1 = -phi'/phi and G^2 = -1 - z phi'/phi for the stable limit'''
    z_grid = np.asarray(z_grid, dtype=float)
    table = limit_density(alpha, c_plus, c_minus, z_grid, settings or InversionSettings())
    g1, g2 = _g_from_kernels(table.values, table.dvalues, z_grid * table.dvalues, table.peak)
    return GTables(z_grid, g1, g2)


def fisher_matrix_mc(alpha: float, c_plus: float, c_minus: float, gamma: float, size: int,
                     rng: RNG_TYPE, settings: Optional[InversionSettings] = None
                     ) -> Tuple[np.ndarray, np.ndarray]:
    '''Covariance of gamma^-1 G_{alpha,C+-}(Z_1) with Z_1 drawn exactly.

    Returns:
        (2x2 covariance estimate, 2 x 2 standard errors of its entries)
    '''
    table = limit_table(alpha, c_plus, c_minus, settings=settings)
    draws = stable_rvs(alpha, c_plus, c_minus, size, rng)
    phi, dphi = table.evaluate(draws), table.evaluate(draws, 1)
    g1, g2 = _g_from_kernels(phi, dphi, draws * dphi, table.peak)
    values = np.column_stack([g1, g2]) / gamma
    products = values[:, :, np.newaxis] * values[:, np.newaxis, :]
    return (np.cov(values, rowvar=False),
            products.std(axis=0, ddof=1) / np.sqrt(size))
