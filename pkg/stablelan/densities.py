# SPDX-License-Identifier: Apache-2.0
'''Characteristic exponents and the densities obtained by inverting them.

Conventions:

- psi(lambda) = int (exp(i lambda u) - 1 - i lambda u 1{|u| <= 1}) m(u) du
- a density is phi(x) = (1 / 2 pi) int exp(-i lambda x + exponent(lambda)) dlambda
  = (1 / pi) Re int_0^inf exp(exponent(lambda)) exp(-i lambda x) dlambda
- an exponent is stored as centered(lambda) + i lambda shift, the linear phase is applied
  by evaluating at x - shift
'''
import logging
import math
from functools import cached_property, lru_cache, partial
from typing import Callable, Dict, List, Optional, Tuple, Union

import attr
import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.interpolate import CubicHermiteSpline
from scipy.special import gamma as gamma_function

from stablelan import StableLanError
from stablelan.levy_model import (LevyMeasureSpec, Theta, c_t, side_integral, taper,
                                  magnitude_bound)
from stablelan.utils.quadrature import FourierGrid, integrate

L = logging.getLogger('stablelan')

NUISANCE_KINDS = ('zero', 'compound_poisson', 'stable')
JUMP_LAWS = ('normal', 'laplace')

# relative floor of log densities
LOG_FLOOR = 1e-300
# negative inversion noise tolerated silently, relative to the peak
CLIP_TOLERANCE = 1e-9


class DensityError(StableLanError):
    '''Error related to characteristic exponents, their inversion and the derived kernels'''


@attr.s(frozen=True)
class NuisanceSpec:
    '''The independent nuisance process U'''
    #: one of NUISANCE_KINDS
    kind = attr.ib(type=str, default='zero')
    #: jump rate of the compound Poisson process
    rate = attr.ib(type=float, default=0., converter=float)
    #: standard deviation of the compound Poisson jumps
    jump_std = attr.ib(type=float, default=1., converter=float)
    #: law of the compound Poisson jumps, one of JUMP_LAWS
    jump_law = attr.ib(type=str, default='normal')
    #: index of the stable nuisance
    alpha_u = attr.ib(type=Optional[float], default=None)
    #: scale of the stable nuisance: log cf = -t (scale |q|)^alpha_u
    scale = attr.ib(type=float, default=1., converter=float)

    def __attrs_post_init__(self):
        if self.kind not in NUISANCE_KINDS:
            raise DensityError(f'Unknown nuisance kind {self.kind!r}')
        if self.kind == 'compound_poisson':
            if self.rate < 0 or self.jump_std <= 0:
                raise DensityError('compound_poisson needs rate >= 0 and jump_std > 0')
            if self.jump_law not in JUMP_LAWS:
                raise DensityError(f'Unknown jump law {self.jump_law!r}')
        if self.kind == 'stable':
            if self.alpha_u is None or not 0 < self.alpha_u < 2 or self.scale <= 0:
                raise DensityError('stable nuisance needs alpha_u in (0, 2) and scale > 0')

    @property
    def bg_index(self) -> float:
        '''Blumenthal-Getoor index'''
        return float(self.alpha_u) if self.kind == 'stable' else 0.

    @property
    def is_zero(self) -> bool:
        '''True if U vanishes identically'''
        return self.kind == 'zero' or (self.kind == 'compound_poisson' and self.rate == 0)

    @property
    def label(self) -> str:
        '''A short human readable name'''
        if self.kind == 'compound_poisson':
            return f'cp(rate={self.rate:g},{self.jump_law},std={self.jump_std:g})'
        if self.kind == 'stable':
            return f'stable(alpha_u={self.alpha_u:g},scale={self.scale:g})'
        return 'zero'

    def validate(self, alpha: float):
        '''The nuisance must be less active than the main process'''
        if self.bg_index >= alpha:
            raise DensityError(f'Nuisance {self.label} has Blumenthal-Getoor index '
                               f'{self.bg_index} >= alpha={alpha}')


ZERO_NUISANCE = NuisanceSpec()


def nuisance_log_cf(nuisance: NuisanceSpec, t: float, q: np.ndarray) -> np.ndarray:
    '''log E exp(i q U_t)'''
    q = np.asarray(q, dtype=float)
    if nuisance.is_zero:
        return np.zeros(q.shape, dtype=complex)
    if nuisance.kind == 'compound_poisson':
        if nuisance.jump_law == 'normal':
            jump_cf = np.exp(-0.5 * (nuisance.jump_std * q) ** 2)
        else:
            b = nuisance.jump_std / np.sqrt(2.)
            jump_cf = 1. / (1. + (b * q) ** 2)
        return (t * nuisance.rate * (jump_cf - 1.)).astype(complex)
    return (-t * np.abs(nuisance.scale * q) ** nuisance.alpha_u).astype(complex)


def nuisance_lambda_dlog_cf(nuisance: NuisanceSpec, t: float, q: np.ndarray) -> np.ndarray:
    '''q * d/dq log E exp(i q U_t)'''
    q = np.asarray(q, dtype=float)
    if nuisance.is_zero:
        return np.zeros(q.shape, dtype=complex)
    if nuisance.kind == 'compound_poisson':
        if nuisance.jump_law == 'normal':
            s2q2 = (nuisance.jump_std * q) ** 2
            out = -t * nuisance.rate * s2q2 * np.exp(-0.5 * s2q2)
        else:
            b2q2 = (nuisance.jump_std * q) ** 2 / 2.
            out = -2. * t * nuisance.rate * b2q2 / (1. + b2q2) ** 2
        return out.astype(complex)
    return (-nuisance.alpha_u * t * np.abs(nuisance.scale * q) ** nuisance.alpha_u).astype(complex)


def _sin_minus_identity(x: float) -> float:
    if abs(x) < 0.1:
        x2 = x * x
        return -x * x2 / 6. * (1. - x2 / 20. * (1. - x2 / 42. * (1. - x2 / 72.)))
    return math.sin(x) - x


def _half_exponent(spec: LevyMeasureSpec, side: int, lam: float,
                   scale: float) -> Tuple[float, float]:
    '''int_0^inf (cos(lam v) - 1) g(v) dv and int_0^inf (sin(lam v) - lam v 1{v <= 1}) g(v) dv

    where g(v) = scale^(alpha+1) m(side * scale * v), lam > 0.
    '''
    constant = spec.c_plus if side > 0 else spec.c_minus
    if constant == 0:
        return 0., 0.
    alpha = spec.alpha

    def g(v):
        return constant * taper(spec, side * scale * v) * v ** (-alpha - 1.)

    bound = magnitude_bound(spec) / scale
    cut = 1e-8 / (1. + lam)
    c0 = g(cut) * cut ** (1. + alpha)
    cos_part = -lam ** 2 / 2. * c0 * cut ** (2. - alpha) / (2. - alpha)
    sin_part = -lam ** 3 / 6. * c0 * cut ** (3. - alpha) / (3. - alpha)

    top = min(10. * np.pi / lam, bound)
    if cut < top:
        def cos_term(s):
            v = math.exp(s)
            return -2. * math.sin(lam * v / 2.) ** 2 * g(v) * v

        def sin_term(s):
            v = math.exp(s)
            x = lam * v
            oscillation = _sin_minus_identity(x) if v <= 1. else math.sin(x)
            return oscillation * g(v) * v

        points = [0., -math.log(lam)]
        low, high = math.log(cut), math.log(top)
        cos_part += integrate(cos_term, low, high, points=points).value
        sin_part += integrate(sin_term, low, high, points=points).value

    if top < bound:
        if spec.taper == 'none':
            tail = constant * top ** (-alpha) / alpha
            if top >= 1.:
                correction = 0.
            elif alpha == 1.:
                correction = -lam * constant * math.log(top)
            else:
                correction = lam * constant * (1. - top ** (1. - alpha)) / (1. - alpha)
        else:
            tail = scale ** alpha * side_integral(spec, lambda _: 1., scale * top, np.inf, side)
            correction = 0.
            if top < 1.:
                correction = lam * scale ** (alpha - 1.) * side_integral(
                    spec, abs, scale * top, scale, side)
        cos_part += integrate(g, top, np.inf, weight='cos', wvar=lam).value - tail
        sin_part += integrate(g, top, np.inf, weight='sin', wvar=lam).value - correction
    return cos_part, sin_part


@lru_cache(maxsize=None)
def _psi_quadrature(spec: LevyMeasureSpec, lam: float, scale: float = 1.) -> complex:
    '''Exponent of the measure scale^(alpha+1) m(scale v) dv at lam > 0'''
    cos_plus, sin_plus = _half_exponent(spec, 1, lam, scale)
    cos_minus, sin_minus = _half_exponent(spec, -1, lam, scale)
    return complex(cos_plus + cos_minus, sin_plus - sin_minus)


def _quadrature_exponent(spec: LevyMeasureSpec, scale: float, lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape, dtype=complex)
    for index, value in np.ndenumerate(lam):
        if value > 0:
            out[index] = _psi_quadrature(spec, float(value), scale)
        elif value < 0:
            out[index] = np.conj(_psi_quadrature(spec, -float(value), scale))
    return out


@attr.s(frozen=True, eq=False)
class CharExponentHandle:
    '''A characteristic exponent written as centered(lambda) + i lambda shift'''
    #: vectorized callable, centered(-lambda) = conj(centered(lambda))
    centered = attr.ib(type=Callable[[np.ndarray], np.ndarray])
    #: the linear phase
    shift = attr.ib(type=float, default=0.)
    label = attr.ib(type=str, default='')
    #: how evaluations are cached: 'quadrature' (lru cache per lambda) or 'closed' (none needed)
    cache = attr.ib(type=str, default='closed')

    def __call__(self, lam):
        scalar = np.ndim(lam) == 0
        lam = np.asarray(lam, dtype=float)
        out = self.centered(lam) + 1j * lam * self.shift
        return complex(out) if scalar else out

    def real_part(self, lam: float) -> float:
        '''Re of the exponent at a single frequency'''
        return float(np.real(self.centered(np.array([lam]))[0]))


def _stable_anchored(alpha: float, c_plus: float, c_minus: float) -> CharExponentHandle:
    '''Exponent of the stable measure carried from lambda = 1 to every lambda by
    self-similarity'''
    anchor = _psi_quadrature(LevyMeasureSpec(alpha, c_plus, c_minus), 1.)
    skew = c_plus - c_minus
    label = f'stable(alpha={alpha:g},c_plus={c_plus:g},c_minus={c_minus:g})'
    if alpha == 1.:
        def centered(lam):
            magnitude = np.abs(lam)
            with np.errstate(divide='ignore', invalid='ignore'):
                log_term = np.where(magnitude > 0, lam * np.log(magnitude), 0.)
            return magnitude * anchor.real - 1j * skew * log_term
        return CharExponentHandle(centered, anchor.imag, label)

    coef = anchor + 1j * skew / (1. - alpha)

    def centered(lam):
        return np.abs(lam) ** alpha * (coef.real + 1j * np.sign(lam) * coef.imag)
    return CharExponentHandle(centered, -skew / (1. - alpha), label)


def psi_handle(spec: LevyMeasureSpec, anchored: bool = True) -> CharExponentHandle:
    '''Handle on psi, the exponent of Z_1'''
    if spec.taper == 'none' and anchored:
        return _stable_anchored(spec.alpha, spec.c_plus, spec.c_minus)
    return CharExponentHandle(partial(_quadrature_exponent, spec, 1.), 0., f'psi({spec})',
                              'quadrature')


def psi(spec: LevyMeasureSpec, lam, anchored: bool = True):
    '''The characteristic exponent of the Levy measure'''
    return psi_handle(spec, anchored)(lam)


def psi_stable(alpha: float, c_plus: float, c_minus: float, lam, anchored: bool = True):
    '''The exponent of the stable measure C+- |u|^(-alpha-1)'''
    return psi(LevyMeasureSpec(alpha, c_plus, c_minus), lam, anchored)


def psi_stable_oracle(alpha: float, c_plus: float, c_minus: float, lam):
    '''Closed form of psi_stable, used to check the quadrature'''
    scalar = np.ndim(lam) == 0
    lam = np.asarray(lam, dtype=float)
    total, skew = c_plus + c_minus, c_plus - c_minus
    if alpha == 1.:
        with np.errstate(divide='ignore', invalid='ignore'):
            log_term = np.where(lam != 0, lam * np.log(np.abs(lam)), 0.)
        out = (-np.pi / 2. * total * np.abs(lam)
               - 1j * skew * log_term + 1j * skew * (1. - np.euler_gamma) * lam)
    else:
        beta = skew / total
        out = (gamma_function(-alpha) * np.cos(np.pi * alpha / 2.) * total * np.abs(lam) ** alpha
               * (1. - 1j * np.sign(lam) * beta * np.tan(np.pi * alpha / 2.))
               - 1j * lam * skew / (1. - alpha))
    return complex(out) if scalar else out


def scaled_handle(spec: LevyMeasureSpec, t: float, method: str = 'scaled') -> CharExponentHandle:
    '''Handle on psi_{alpha,t}, the exponent of t^(-1/alpha) (Z_t + c_t)

    Args:
        spec: the measure
        t: the time
        method: 'scaled' for t psi(t^(-1/alpha) lambda) + i lambda c_t t^(-1/alpha),
            'direct' for the quadrature against m_t(v) = t^(1+1/alpha) m(t^(1/alpha) v)
    '''
    alpha = spec.alpha
    label = f'psi_t(t={t:g},{method})'
    if method == 'direct':
        return CharExponentHandle(partial(_quadrature_exponent, spec, t ** (1. / alpha)), 0.,
                                  label, 'quadrature')
    if method != 'scaled':
        raise DensityError(f'Unknown method {method!r}')
    base = psi_handle(spec)
    factor = t ** (-1. / alpha)

    def centered(lam):
        return t * base.centered(factor * np.asarray(lam, dtype=float))
    return CharExponentHandle(centered, t * factor * base.shift + c_t(spec, t) * factor, label,
                              base.cache)


def psi_alpha_t(spec: LevyMeasureSpec, t: float, lam, method: str = 'scaled'):
    '''The exponent psi_{alpha,t}'''
    return scaled_handle(spec, t, method)(lam)


@attr.s(frozen=True)
class InversionSettings:
    '''Resolution of the Fourier inversion'''
    #: number of geometrically graded segments below the reference frequency
    graded_segments = attr.ib(type=int, default=40)
    #: intervals per graded segment (even)
    graded_intervals = attr.ib(type=int, default=32)
    #: intervals per octave above the reference frequency (even)
    upper_intervals = attr.ib(type=int, default=64)
    #: |exp(exponent)| at the truncation frequency
    cutoff = attr.ib(type=float, default=1e-12)
    #: doubling budget of the truncation search
    max_doublings = attr.ib(type=int, default=60)
    #: evaluation points processed at once
    chunk = attr.ib(type=int, default=256)

    @classmethod
    def coarse(cls) -> 'InversionSettings':
        '''Lighter settings, used for exponents computed by quadrature'''
        return cls(graded_segments=30, graded_intervals=12, upper_intervals=24)


def reference_frequency(handle: CharExponentHandle, max_doublings: int = 60) -> float:
    '''The frequency where Re(exponent) = -1, found by bisection in log scale'''
    def re(lam):
        return handle.real_part(lam)

    lo = hi = 1.
    count = 0
    if re(1.) > -1.:
        while re(hi) > -1.:
            hi *= 2.
            count += 1
            if count > max_doublings:
                raise DensityError(f'{handle.label}: insufficient decay of the exponent, '
                                   'increase the max_doublings budget')
        lo = hi / 2.
    else:
        while re(lo) <= -1.:
            lo /= 2.
            count += 1
            if count > max_doublings:
                raise DensityError(f'{handle.label}: exponent too large near the origin')
        hi = lo * 2.
    for _ in range(40):
        mid = math.sqrt(lo * hi)
        if re(mid) > -1.:
            lo = mid
        else:
            hi = mid
    return math.sqrt(lo * hi)


def spectral_grid(handle: CharExponentHandle,
                  settings: InversionSettings = InversionSettings()) -> Tuple[FourierGrid, float]:
    '''The lambda grid used to invert ``handle``.

    Geometric segments shrink towards 0 from the reference frequency (where the |lambda|^alpha
    kink carrying the tails lives), octaves go up to the truncation frequency where
    |exp(exponent)| < cutoff.

    Returns:
        (grid, reference frequency)
    '''
    lambda_s = reference_frequency(handle, settings.max_doublings)
    log_cutoff = math.log(settings.cutoff)
    octaves = 0
    while handle.real_part(lambda_s * 2. ** octaves) >= log_cutoff:
        octaves += 1
        if octaves > settings.max_doublings:
            raise DensityError(f'{handle.label}: no truncation frequency found within '
                               f'{settings.max_doublings} doublings, increase the budget')
    octaves = max(octaves, 1)
    boundaries = np.concatenate([[0.],
                                 lambda_s * 2. ** -np.arange(settings.graded_segments, 0, -1),
                                 lambda_s * 2. ** np.arange(0, octaves + 1)])
    intervals = np.concatenate([np.full(settings.graded_segments + 1, settings.graded_intervals),
                                np.full(octaves, settings.upper_intervals)])
    return FourierGrid(boundaries, intervals), lambda_s


@attr.s(frozen=True, eq=False)
class Spectrum:
    '''Spectra sampled on a FourierGrid, sharing a linear phase'''
    grid = attr.ib(type=FourierGrid)
    #: complex spectra at the grid nodes
    values = attr.ib(type=List[np.ndarray])
    shift = attr.ib(type=float, default=0.)
    lambda_s = attr.ib(type=float, default=1.)
    chunk = attr.ib(type=int, default=256)

    def evaluate(self, x: np.ndarray, orders=(0, 1)) -> List[List[np.ndarray]]:
        '''(1 / pi) Re of the transforms: out[spectrum][order]'''
        x = np.asarray(x, dtype=float) - self.shift
        out = self.grid.transform(self.values, x, orders, self.chunk)
        return [[np.real(value) / np.pi for value in row] for row in out]


def _hermite_trapezoid(x: np.ndarray, values: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    '''Interval integrals of the trapezoid rule with the end-point derivative correction'''
    step = np.diff(x)
    return step * (values[1:] + values[:-1]) / 2. - step ** 2 * np.diff(dvalues) / 12.


def _edge_exponent(x: float, value: float, dvalue: float) -> float:
    '''Local power-law exponent p = -x phi'(x) / phi(x) at an edge of the grid'''
    if value <= 0:
        return np.inf
    return -x * dvalue / value


@attr.s(frozen=True, eq=False)
class DensityTable:
    '''A density (or kernel) and its derivative on a grid'''
    x_grid = attr.ib(type=np.ndarray)
    values = attr.ib(type=np.ndarray)
    dvalues = attr.ib(type=np.ndarray)
    #: the time, or 'limit' for the stable limit
    t = attr.ib(type=Union[float, str], default='limit')
    meta = attr.ib(type=Dict, factory=dict)
    #: second derivative, used to interpolate dvalues
    d2values = attr.ib(type=Optional[np.ndarray], default=None)
    #: callable(points) -> (values, dvalues) used outside the grid
    direct = attr.ib(type=Optional[Callable], default=None)

    @cached_property
    def _spline(self):
        return CubicHermiteSpline(self.x_grid, self.values, self.dvalues)

    @cached_property
    def _dspline(self):
        if self.d2values is None:
            return self._spline.derivative()
        return CubicHermiteSpline(self.x_grid, self.dvalues, self.d2values)

    @property
    def peak(self) -> float:
        '''Largest value of the table'''
        return float(np.max(self.values))

    def evaluate(self, points, derivative: int = 0) -> np.ndarray:
        '''Hermite interpolation inside the grid, direct spectral evaluation outside'''
        scalar = np.ndim(points) == 0
        points = np.atleast_1d(np.asarray(points, dtype=float))
        out = np.empty(points.shape)
        inside = (points >= self.x_grid[0]) & (points <= self.x_grid[-1])
        spline = self._spline if derivative == 0 else self._dspline
        out[inside] = spline(points[inside])
        if not inside.all():
            if self.direct is None:
                raise DensityError('Points outside the table and no spectrum to extend it')
            out[~inside] = self.direct(points[~inside])[derivative]
        return float(out[0]) if scalar else out

    def log_density(self, points) -> Tuple[np.ndarray, np.ndarray]:
        '''log of the interpolated values, floored at LOG_FLOOR times the peak

        Returns:
            (log values, boolean mask of the floored points)
        '''
        values = np.atleast_1d(self.evaluate(points))
        floor = LOG_FLOOR * self.peak
        floored = values < floor
        return np.log(np.where(floored, floor, values)), floored

    def _tail_exponents(self) -> Tuple[float, float]:
        x, values, dvalues = self.x_grid, self.values, self.dvalues
        return (_edge_exponent(x[0], values[0], dvalues[0]),
                _edge_exponent(x[-1], values[-1], dvalues[-1]))

    def _tail_masses(self) -> Tuple[float, float]:
        x, values = self.x_grid, self.values
        left, right = self._tail_exponents()
        left_mass = values[0] * abs(x[0]) / (left - 1.) if left > 1 and x[0] < 0 else 0.
        right_mass = values[-1] * abs(x[-1]) / (right - 1.) if right > 1 and x[-1] > 0 else 0.
        return float(left_mass), float(right_mass)

    def mass(self) -> float:
        '''Integral of the table plus the power-tail mass beyond both edges'''
        interior = _hermite_trapezoid(self.x_grid, self.values, self.dvalues).sum()
        return float(interior + sum(self._tail_masses()))

    def cdf(self, points) -> np.ndarray:
        '''Cumulative distribution function, linear between grid points, power tails outside'''
        x = self.x_grid
        points = np.asarray(points, dtype=float)
        left, right = self._tail_masses()
        left_exponent, right_exponent = self._tail_exponents()
        cumulative = left + np.concatenate([[0.], np.cumsum(
            _hermite_trapezoid(x, self.values, self.dvalues))])
        out = np.interp(points, x, cumulative)
        with np.errstate(divide='ignore', invalid='ignore'):
            below = points < x[0]
            if left > 0:
                out = np.where(below, left * (points / x[0]) ** (1. - left_exponent), out)
            else:
                out = np.where(below, 0., out)
            above = points > x[-1]
            if right > 0:
                out = np.where(above, cumulative[-1]
                               + right * (1. - (points / x[-1]) ** (1. - right_exponent)), out)
            else:
                out = np.where(above, cumulative[-1], out)
        return np.clip(out, 0., 1.)

    def to_frame(self) -> pd.DataFrame:
        '''Columns x, value, dvalue'''
        return pd.DataFrame({'x': self.x_grid, 'value': self.values, 'dvalue': self.dvalues})


def _clip(values: np.ndarray, x_grid: np.ndarray, label: str) -> Tuple[np.ndarray, float]:
    negative = np.minimum(values, 0.)
    if not negative.any():
        return values, 0.
    clipped_mass = float(-trapezoid(negative, x_grid)) if len(x_grid) > 1 else 0.
    if negative.min() < -CLIP_TOLERANCE * np.max(values):
        L.warning('%s: inversion noise down to %.3g clipped (mass %.3g)', label, negative.min(),
                  clipped_mass)
    return np.maximum(values, 0.), clipped_mass


def _spectrum(handle: CharExponentHandle, settings: InversionSettings,
              extra: Optional[Callable[..., List[np.ndarray]]] = None) -> Spectrum:
    grid, lambda_s = spectral_grid(handle, settings)
    nodes = grid.nodes
    base = np.exp(handle.centered(nodes))
    values = [base] if extra is None else extra(nodes, base)
    return Spectrum(grid, values, handle.shift, lambda_s, settings.chunk)


def _table_from_spectrum(spectrum: Spectrum, x_grid: np.ndarray, t, label: str,
                         index: int = 0) -> DensityTable:
    x_grid = np.asarray(x_grid, dtype=float)
    values, dvalues, d2values = spectrum.evaluate(x_grid, (0, 1, 2))[index]
    values, clipped = _clip(values, x_grid, label)

    def direct(points):
        return spectrum.evaluate(points, (0, 1))[index]

    meta = {'lambda_max': spectrum.grid.lambda_max, 'lambda_s': spectrum.lambda_s,
            'top_step': spectrum.grid.top_step, 'nodes': len(spectrum.grid.nodes),
            'shift': spectrum.shift, 'clipped_mass': clipped, 'label': label}
    return DensityTable(x_grid, values, dvalues, t, meta, d2values, direct)


def invert_to_density(handle: CharExponentHandle, x_grid: np.ndarray,
                      settings: InversionSettings = InversionSettings(),
                      t: Union[float, str] = 'limit') -> DensityTable:
    '''The density whose characteristic exponent is ``handle``, with its derivative'''
    return _table_from_spectrum(_spectrum(handle, settings), x_grid, t, handle.label)


def limit_density(alpha: float, c_plus: float, c_minus: float, x_grid: np.ndarray,
                  settings: InversionSettings = InversionSettings()) -> DensityTable:
    '''The stable density phi_{alpha,C+-}'''
    handle = psi_handle(LevyMeasureSpec(alpha, c_plus, c_minus))
    return invert_to_density(handle, x_grid, settings, 'limit')


def default_z_grid(lambda_s: float = 1., core: float = 20., core_points: int = 801,
                   reach: float = 1e4, ratio: float = 1.02) -> np.ndarray:
    '''Uniform grid on |z| <= core / lambda_s, geometric up to reach / lambda_s'''
    scale = 1. / lambda_s
    tails = core * ratio ** np.arange(1, int(np.ceil(np.log(reach / core) / np.log(ratio))) + 1)
    return scale * np.concatenate([-tails[::-1], np.linspace(-core, core, core_points), tails])


def default_settings(spec: LevyMeasureSpec) -> InversionSettings:
    '''Full resolution for closed-form exponents, coarse when psi is computed by quadrature'''
    return InversionSettings() if spec.taper == 'none' else InversionSettings.coarse()


@attr.s(frozen=True, eq=False)
class KernelValues:
    '''f, f', f'' of the convolution kernel and the nuisance term W, W' at some points'''
    z = attr.ib(type=np.ndarray)
    f = attr.ib(type=np.ndarray)
    f1 = attr.ib(type=np.ndarray)
    f1_prime = attr.ib(type=np.ndarray)
    w = attr.ib(type=np.ndarray)
    w_prime = attr.ib(type=np.ndarray)

    @property
    def f2(self) -> np.ndarray:
        '''f^(2)(z) = z f^(1)(z) - W(z)'''
        return self.z * self.f1 - self.w

    @property
    def f2_prime(self) -> np.ndarray:
        '''Derivative of f^(2)'''
        return self.f1 + self.z * self.f1_prime - self.w_prime


class KernelModel:
    '''The kernels f_t, f_t^(1), f_t^(2) of the scaled increment.

    f_t(z) = int phi_{alpha,t}(z - y / gamma) nu_t(dy) where nu_t is the law of t^(-1/alpha) U_t.
    In the frequency domain this is G(lambda) = exp(psi_{alpha,t}(lambda) + L(s lambda)) with
    s = gamma^-1 t^-1/alpha and L the log cf of U_t. The nuisance term
    W(z) = int (y / gamma) phi'_{alpha,t}(z - y / gamma) nu_t(dy) has spectrum -G D(s lambda)
    where D(q) = q L'(q).
    '''

    def __init__(self, spec: LevyMeasureSpec, theta: Theta,
                 nuisance: NuisanceSpec = ZERO_NUISANCE, t: float = 1.,
                 settings: Optional[InversionSettings] = None):
        nuisance.validate(spec.alpha)
        self.spec = spec
        self.theta = theta
        self.nuisance = nuisance
        self.t = t
        self.settings = settings or default_settings(spec)
        self.s = 1. / (theta.gamma * t ** (1. / spec.alpha))
        self.handle = scaled_handle(spec, t)
        self.spectrum = _spectrum(self.handle, self.settings, self._spectra)

    def _spectra(self, nodes, base):
        if self.nuisance.is_zero:
            return [base, np.zeros_like(base)]
        q = self.s * nodes
        kernel = base * np.exp(nuisance_log_cf(self.nuisance, self.t, q))
        return [kernel, -kernel * nuisance_lambda_dlog_cf(self.nuisance, self.t, q)]

    @property
    def lambda_s(self) -> float:
        '''Reference frequency of the spectral grid'''
        return self.spectrum.lambda_s

    def evaluate(self, z) -> KernelValues:
        '''Direct spectral evaluation at arbitrary points'''
        z = np.atleast_1d(np.asarray(z, dtype=float))
        (f, f1, f1_prime), (w, w_prime, _) = self.spectrum.evaluate(z, (0, 1, 2))
        return KernelValues(z, f, f1, f1_prime, w, w_prime)

    def tables(self, z_grid: Optional[np.ndarray] = None) -> 'KernelTables':
        '''Hermite tables of the kernels on ``z_grid``'''
        if z_grid is None:
            z_grid = default_z_grid(self.lambda_s)
        return KernelTables(self, np.asarray(z_grid, dtype=float))


class KernelTables:
    '''Interpolation tables of f, f^(1) and f^(2) with spectral extension'''

    def __init__(self, model: KernelModel, z_grid: np.ndarray):
        self.model = model
        values = model.evaluate(z_grid)
        f, clipped = _clip(values.f, z_grid, f'kernel(t={model.t:g})')
        meta = {'lambda_s': model.lambda_s, 'lambda_max': model.spectrum.grid.lambda_max,
                'clipped_mass': clipped, 'nuisance': model.nuisance.label}

        def extend(attribute):
            def direct(points):
                extended = model.evaluate(points)
                return getattr(extended, attribute[0]), getattr(extended, attribute[1])
            return direct

        self.f = DensityTable(z_grid, f, values.f1, model.t, meta, values.f1_prime,
                              extend(('f', 'f1')))
        self.f1 = DensityTable(z_grid, values.f1, values.f1_prime, model.t, meta, None,
                               extend(('f1', 'f1_prime')))
        self.f2 = DensityTable(z_grid, values.f2, values.f2_prime, model.t, meta, None,
                               extend(('f2', 'f2_prime')))

    def evaluate(self, z) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        '''(f, f^(1), f^(2)) at arbitrary points'''
        return self.f.evaluate(z), self.f.evaluate(z, 1), self.f2.evaluate(z)


def f_kernels(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec, t: float,
              z_grid: np.ndarray, settings: Optional[InversionSettings] = None
              ) -> Tuple[DensityTable, DensityTable, DensityTable]:
    '''Tables of f_t, f_t^(1), f_t^(2)'''
    tables = KernelModel(spec, theta, nuisance, t, settings).tables(z_grid)
    return tables.f, tables.f1, tables.f2


def standardize(spec: LevyMeasureSpec, theta: Theta, t: float, x) -> np.ndarray:
    '''z = gamma^-1 t^-1/alpha (x - beta t + gamma c_t)'''
    return ((np.asarray(x, dtype=float) - theta.beta * t + theta.gamma * c_t(spec, t))
            / (theta.gamma * t ** (1. / spec.alpha)))


def transition_density(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec, t: float,
                       x_grid: np.ndarray, method: str = 'direct',
                       settings: Optional[InversionSettings] = None) -> DensityTable:
    '''The density p_t(theta; x) of X_t = beta t + gamma Z_t + U_t

    Args:
        spec: the Levy measure of Z
        theta: (beta, gamma)
        nuisance: the nuisance U
        t: the time
        x_grid: evaluation grid
        method: 'direct' inverts i lambda beta t + t psi(gamma lambda) + L_U(lambda),
            'scaled' rescales the kernel f_t
        settings: inversion resolution
    '''
    nuisance.validate(spec.alpha)
    settings = settings or default_settings(spec)
    x_grid = np.asarray(x_grid, dtype=float)
    if method == 'scaled':
        model = KernelModel(spec, theta, nuisance, t, settings)
        s = model.s
        z = standardize(spec, theta, t, x_grid)
        values = model.evaluate(z)

        def direct(points):
            extended = model.evaluate(standardize(spec, theta, t, points))
            return s * extended.f, s ** 2 * extended.f1

        f, clipped = _clip(values.f, z, 'transition(scaled)')
        return DensityTable(x_grid, s * f, s ** 2 * values.f1, t,
                            {'method': 'scaled', 'clipped_mass': clipped},
                            s ** 3 * values.f1_prime, direct)
    if method != 'direct':
        raise DensityError(f'Unknown method {method!r}')

    base = psi_handle(spec)
    gamma = theta.gamma

    def centered(lam):
        lam = np.asarray(lam, dtype=float)
        return t * base.centered(gamma * lam) + nuisance_log_cf(nuisance, t, lam)

    handle = CharExponentHandle(centered, theta.beta * t + t * gamma * base.shift,
                                f'transition(t={t:g})', base.cache)
    table = invert_to_density(handle, x_grid, settings, t)
    table.meta['method'] = 'direct'
    return table
