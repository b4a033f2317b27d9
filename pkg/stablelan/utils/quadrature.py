# SPDX-License-Identifier: Apache-2.0
'''Quadrature helpers.

Two tools live here:

- ``integrate``: a thin wrapper around ``scipy.integrate.quad`` that counts function
  evaluations and turns QUADPACK give-ups into ``QuadratureError``.
- ``FourierGrid``: Filon-type quadrature of ``int_0^Lambda G(lam) exp(-i lam x) dlam`` on a
  piecewise uniform lambda grid. The spectrum is interpolated by quadratics on panels of two
  intervals and the product with the exponential is integrated exactly, so the rule does not
  need to resolve the oscillation in ``x``. The x-derivatives of the result are the exact
  derivatives of the same interpolant.
'''
import logging
from typing import Callable, List, Optional, Sequence

import attr
import numpy as np
from scipy.integrate import quad

from stablelan import StableLanError

L = logging.getLogger('stablelan')

EPSABS = 1e-12
EPSREL = 1e-10
DEFAULT_LIMIT = 200
MAX_EVALUATIONS = 10 ** 6

# QUADPACK flags roundoff long before the answer is unusable
ACCEPT_ABS = 1e-10
ACCEPT_REL = 1e-7

_KRONROD_POINTS = 21
_SERIES_THRESHOLD = 4.
_SERIES_TERMS = 24
_MAX_MOMENT = 4


class QuadratureError(StableLanError):
    '''Error related to an integral that could not be computed'''

    def __init__(self, message: str, neval: int = 0):
        super().__init__(f'{message} (after {neval} function evaluations)')
        self.neval = neval


@attr.s(frozen=True)
class Integral:
    '''Result of ``integrate``'''
    #: The value of the integral
    value = attr.ib(type=float)
    #: QUADPACK's absolute error estimate
    abserr = attr.ib(type=float, default=0.)
    #: The number of integrand evaluations
    neval = attr.ib(type=int, default=0)


def integrate(func: Callable[[float], float], a: float, b: float,
              points: Optional[Sequence[float]] = None,
              weight: Optional[str] = None, wvar: Optional[float] = None,
              limit: int = DEFAULT_LIMIT,
              max_evaluations: Optional[int] = None) -> Integral:
    '''Integrate ``func`` over [a, b] with absolute tolerance 1e-12 and relative 1e-10.

    Args:
        func: the scalar integrand
        a: lower bound
        b: upper bound, may be ``np.inf``
        points: break points, those outside (a, b) are ignored
        weight: 'cos' or 'sin' to use QUADPACK's Fourier weighted rules, ``wvar`` is then the
            frequency
        wvar: the frequency of the weight
        limit: the maximum number of subintervals
        max_evaluations: if given, overrides ``limit`` and raise when the budget is exhausted

    Returns:
        an Integral
    '''
    if a == b:
        return Integral(0.)
    if max_evaluations is not None:
        limit = max(DEFAULT_LIMIT, max_evaluations // _KRONROD_POINTS)
    kwargs = {'epsabs': EPSABS, 'epsrel': EPSREL, 'limit': limit, 'full_output': 1}
    if weight is not None:
        kwargs.update(weight=weight, wvar=wvar)
        if np.isinf(b):
            kwargs['limlst'] = 200
    elif points is not None and np.isfinite(a) and np.isfinite(b):
        inner = sorted({float(p) for p in points if a < p < b})
        if inner:
            kwargs['points'] = inner

    out = quad(func, a, b, **kwargs)
    value, abserr, info = out[:3]
    neval = int(info.get('neval', 0)) if isinstance(info, dict) else 0

    if not np.isfinite(value):
        raise QuadratureError(f'Non finite integral over [{a}, {b}]', neval)
    if max_evaluations is not None and neval >= max_evaluations:
        raise QuadratureError(f'Evaluation budget exhausted over [{a}, {b}]', neval)
    if len(out) > 3:
        message = str(out[3]).strip().splitlines()[0]
        if abserr > max(ACCEPT_ABS, ACCEPT_REL * abs(value)):
            raise QuadratureError(f'{message} [{a}, {b}], error estimate {abserr:.3g}', neval)
        L.debug('quad warning accepted on [%s, %s] (abserr=%.3g): %s', a, b, abserr, message)
    return Integral(float(value), float(abserr), neval)


def gauss_legendre(func: Callable[[np.ndarray], np.ndarray],
                   lower: np.ndarray, upper: np.ndarray, order: int = 16) -> np.ndarray:
    '''Vectorized fixed order Gauss-Legendre quadrature over many intervals at once'''
    nodes, weights = np.polynomial.legendre.leggauss(order)
    lower = np.asarray(lower, dtype=float)[..., np.newaxis]
    upper = np.asarray(upper, dtype=float)[..., np.newaxis]
    half = 0.5 * (upper - lower)
    points = lower + half * (nodes + 1.)
    return (func(points) * weights).sum(axis=-1) * half[..., 0]


def _moments(theta: np.ndarray) -> np.ndarray:
    '''mu_k(theta) = int_{-1}^{1} s^k exp(-i theta s) ds for k = 0.._MAX_MOMENT

    Power series below ``_SERIES_THRESHOLD``, upward recurrence above (stable there since
    k / |theta| < 1).
    '''
    theta = np.asarray(theta, dtype=float)
    cos_part = np.zeros((_MAX_MOMENT + 1,) + theta.shape)
    sin_part = np.zeros_like(cos_part)

    small = np.abs(theta) <= _SERIES_THRESHOLD
    if small.any():
        th = theta[small]
        j = np.arange(_SERIES_TERMS)[:, np.newaxis]
        # (-1)^j theta^{2j} / (2j)!
        term_c = np.ones_like(th)
        terms_c = [term_c]
        for jj in range(1, _SERIES_TERMS):
            term_c = -term_c * th ** 2 / ((2 * jj - 1) * (2 * jj))
            terms_c.append(term_c)
        terms_c = np.array(terms_c)
        terms_s = terms_c * th / (2 * j + 1)
        for k in range(_MAX_MOMENT + 1):
            cos_part[k][small] = (terms_c / (k + 2 * j + 1)).sum(axis=0)
            sin_part[k][small] = (terms_s / (k + 2 * j + 2)).sum(axis=0)

    large = ~small
    if large.any():
        th = theta[large]
        sin, cos = np.sin(th), np.cos(th)
        cos_k = sin / th
        sin_k = (1. - cos) / th
        cos_part[0][large] = cos_k
        sin_part[0][large] = sin_k
        for k in range(1, _MAX_MOMENT + 1):
            cos_k, sin_k = sin / th - k * sin_k / th, -cos / th + k * cos_k / th
            cos_part[k][large] = cos_k
            sin_part[k][large] = sin_k

    moments = np.empty(cos_part.shape, dtype=complex)
    moments[0::2] = 2. * cos_part[0::2]
    moments[1::2] = -2j * sin_part[1::2]
    return moments


# Lagrange basis on s = -1, 0, 1 as coefficients of 1, s, s^2
_LAGRANGE = np.array([[0., -0.5, 0.5],
                      [1., 0., -1.],
                      [0., 0.5, 0.5]])


def _basis_integrals(moments: np.ndarray, power: int) -> np.ndarray:
    '''int_{-1}^{1} s^power L_m(s) exp(-i theta s) ds for the three basis polynomials'''
    return np.stack([sum(coef * moments[k + power] for k, coef in enumerate(row))
                     for row in _LAGRANGE])


@attr.s(frozen=True)
class FourierGrid:
    '''A lambda grid made of uniform segments sharing their end points.

    Each segment is a (start, stop, intervals) triple, intervals being even.
    '''
    #: segment boundaries, increasing, starting at 0
    boundaries = attr.ib(type=np.ndarray, eq=False, converter=np.asarray)
    #: number of intervals of each segment (even)
    intervals = attr.ib(type=np.ndarray, eq=False, converter=np.asarray)

    def __attrs_post_init__(self):
        if len(self.boundaries) != len(self.intervals) + 1:
            raise ValueError('boundaries must have one more element than intervals')
        if np.any(self.intervals % 2) or np.any(self.intervals < 2):
            raise ValueError('Each segment needs an even number (>= 2) of intervals')
        if np.any(np.diff(self.boundaries) <= 0):
            raise ValueError('Segment boundaries must be increasing')

    @property
    def nodes(self) -> np.ndarray:
        '''All quadrature nodes, segment joints counted once'''
        parts = [np.linspace(start, stop, n + 1)[(0 if i == 0 else 1):]
                 for i, (start, stop, n) in enumerate(zip(self.boundaries[:-1],
                                                          self.boundaries[1:],
                                                          self.intervals))]
        return np.concatenate(parts)

    @property
    def lambda_max(self) -> float:
        '''The truncation frequency'''
        return float(self.boundaries[-1])

    @property
    def top_step(self) -> float:
        '''The node spacing of the last segment'''
        return float((self.boundaries[-1] - self.boundaries[-2]) / self.intervals[-1])

    def weights(self, x: np.ndarray, order: int = 0) -> np.ndarray:
        '''Complex weights K such that K @ G approximates d^order/dx^order of
        int_0^Lambda G(lam) exp(-i lam x) dlam, for every x.

        Returns:
            an array of shape (len(x), len(self.nodes))
        '''
        x = np.asarray(x, dtype=float)
        blocks = [self._segment_weights(x, start, stop, int(n), order)
                  for start, stop, n in zip(self.boundaries[:-1], self.boundaries[1:],
                                            self.intervals)]

        total = int(np.sum(self.intervals)) + 1
        out = np.zeros((len(x), total), dtype=complex)
        offset = 0
        for block in blocks:
            width = block.shape[1]
            out[:, offset:offset + width] += block
            offset += width - 1
        return out

    @staticmethod
    def _segment_weights(x, start, stop, n_intervals, order):
        step = (stop - start) / n_intervals
        centers = np.linspace(start, stop, n_intervals + 1)[1::2]
        theta = step * x
        moments = _moments(theta)
        basis = [_basis_integrals(moments, power) for power in range(order + 1)]

        # phase of each panel center, shape (n_x, n_panels)
        phase = np.exp(-1j * np.outer(x, centers))
        if order == 0:
            panel = [basis[0][m][:, np.newaxis] * np.ones_like(centers) for m in range(3)]
        elif order == 1:
            panel = [-1j * (basis[0][m][:, np.newaxis] * centers
                            + step * basis[1][m][:, np.newaxis]) for m in range(3)]
        elif order == 2:
            panel = [-(basis[0][m][:, np.newaxis] * centers ** 2
                       + 2. * step * basis[1][m][:, np.newaxis] * centers
                       + step ** 2 * basis[2][m][:, np.newaxis]) for m in range(3)]
        else:
            raise ValueError(f'Derivative order must be 0, 1 or 2, not {order}')

        block = np.zeros((len(x), n_intervals + 1), dtype=complex)
        block[:, 0:-1:2] += step * phase * panel[0]
        block[:, 1::2] += step * phase * panel[1]
        block[:, 2::2] += step * phase * panel[2]
        return block

    def transform(self, spectra: Sequence[np.ndarray], x: np.ndarray,
                  orders: Sequence[int] = (0,), chunk: int = 256) -> List[List[np.ndarray]]:
        '''Apply the weights of each derivative order to every spectrum.

        Args:
            spectra: complex spectra sampled at ``self.nodes``
            x: evaluation points
            orders: derivative orders
            chunk: number of x points processed at once

        Returns:
            out[i][j]: complex transform of spectra[i] with derivative order orders[j]
        '''
        x = np.asarray(x, dtype=float)
        out = [[np.empty(len(x), dtype=complex) for _ in orders] for _ in spectra]
        for lo in range(0, len(x), chunk):
            sub = x[lo:lo + chunk]
            for j, order in enumerate(orders):
                kernel = self.weights(sub, order)
                for i, spectrum in enumerate(spectra):
                    out[i][j][lo:lo + chunk] = kernel @ spectrum
        return out
