# SPDX-License-Identifier: Apache-2.0
'''Levy measures that behave like an alpha-stable one near the origin.

The Levy density is m(u) = f(u) * C+- |u|^(-alpha-1) where C+ is used for u > 0, C- for u < 0
and f is a taper that modifies the tails while keeping f(0) = 1.
'''
import logging
from typing import Callable, Optional, Tuple, Union

import attr
import numpy as np

from stablelan import StableLanError
from stablelan.utils.quadrature import MAX_EVALUATIONS, QuadratureError, integrate

L = logging.getLogger('stablelan')

_ARRAY = Union[float, np.ndarray]

TAPERS = ('none', 'exp_abs', 'gauss', 'sech_like', 'smooth_damp')

# |u| beyond which the taper is below 1e-300
_TAPER_CUTOFF = {'none': np.inf, 'exp_abs': 700., 'gauss': 27., 'sech_like': 700.}

H2_TRUNCATION = 1e-14


class LevyModelError(StableLanError):
    '''Error related to the Levy measure model'''


def _check_alpha(_, attribute, value):
    if not 0 < value < 2:
        raise LevyModelError(f'{attribute.name} must be in (0, 2), got {value}')


def _check_nonnegative(_, attribute, value):
    if value < 0:
        raise LevyModelError(f'{attribute.name} must be >= 0, got {value}')


def _check_positive(_, attribute, value):
    if value is not None and value <= 0:
        raise LevyModelError(f'{attribute.name} must be > 0, got {value}')


def _check_taper(_, attribute, value):
    if value not in TAPERS:
        raise LevyModelError(f'{attribute.name} must be one of {TAPERS}, got {value!r}')


def _default_u0(spec):
    return spec.u1 / 2. if spec.taper == 'smooth_damp' else 1.


@attr.s(frozen=True)
class LevyMeasureSpec:
    '''Parameters of the Levy density m'''
    #: stable-like index
    alpha = attr.ib(type=float, converter=float, validator=_check_alpha)
    #: constant of the positive side
    c_plus = attr.ib(type=float, converter=float, validator=_check_nonnegative)
    #: constant of the negative side
    c_minus = attr.ib(type=float, converter=float, validator=_check_nonnegative)
    #: the tail modifier, one of TAPERS
    taper = attr.ib(type=str, default='none', validator=_check_taper)
    #: support half-width of the smooth_damp taper
    u1 = attr.ib(type=Optional[float], default=None, validator=_check_positive)
    #: threshold of the tail integrability condition
    u0 = attr.ib(type=float, default=attr.Factory(_default_u0, takes_self=True),
                 converter=float, validator=_check_positive)
    #: exponent margin of the tail integrability condition
    delta = attr.ib(type=float, default=0.5, converter=float, validator=_check_positive)

    def __attrs_post_init__(self):
        if self.c_plus + self.c_minus <= 0:
            raise LevyModelError('c_plus + c_minus must be > 0')
        if self.taper == 'smooth_damp':
            if self.u1 is None:
                raise LevyModelError('The smooth_damp taper requires u1')
            if self.u0 >= self.u1:
                raise LevyModelError(f'u0 ({self.u0}) must be below the support bound u1')

    @property
    def symmetric(self) -> bool:
        '''Every taper is even, so the measure is symmetric iff C+ = C-'''
        return self.c_plus == self.c_minus

    @property
    def support(self) -> float:
        '''Bound of the support of m in |u|'''
        return self.u1 if self.taper == 'smooth_damp' else np.inf

    @property
    def skewness(self) -> float:
        '''(C+ - C-) / (C+ + C-)'''
        return (self.c_plus - self.c_minus) / (self.c_plus + self.c_minus)

    @property
    def stable_part(self) -> 'LevyMeasureSpec':
        '''The untapered measure with the same alpha and C+-'''
        return LevyMeasureSpec(self.alpha, self.c_plus, self.c_minus)

    def side_constant(self, u: _ARRAY) -> _ARRAY:
        '''C+ where u > 0, C- elsewhere'''
        return np.where(np.asarray(u) > 0, self.c_plus, self.c_minus)


@attr.s(frozen=True)
class Theta:
    '''The statistical parameter'''
    #: drift
    beta = attr.ib(type=float, default=0., converter=float)
    #: scale
    gamma = attr.ib(type=float, default=1., converter=float)

    @gamma.validator
    def _check_gamma(self, _, value):
        if not value > 0:
            raise LevyModelError(f'gamma must be > 0, got {value}')

    def as_array(self) -> np.ndarray:
        '''(beta, gamma)'''
        return np.array([self.beta, self.gamma])

    @classmethod
    def from_array(cls, values) -> 'Theta':
        '''Inverse of as_array'''
        return cls(float(values[0]), float(values[1]))


PRESETS = {
    'cauchy': dict(alpha=1., c_plus=1. / np.pi, c_minus=1. / np.pi),
    'stable15': dict(alpha=1.5, c_plus=.5, c_minus=.5),
    'stable05': dict(alpha=.5, c_plus=.2, c_minus=.2),
    'asym08': dict(alpha=.8, c_plus=1., c_minus=0.),
    'tempered_exp': dict(alpha=1.5, c_plus=.5, c_minus=.5, taper='exp_abs'),
    'tempered_gauss': dict(alpha=1.5, c_plus=.5, c_minus=.5, taper='gauss'),
    'tempered_sech': dict(alpha=1.5, c_plus=.5, c_minus=.5, taper='sech_like'),
    'damped': dict(alpha=1.5, c_plus=.5, c_minus=.5, taper='smooth_damp', u1=2.),
}


def preset(name: str, **overrides) -> LevyMeasureSpec:
    '''One of the built-in measures, optionally with some fields overridden'''
    if name not in PRESETS:
        raise LevyModelError(f'Unknown preset {name!r}, available: {sorted(PRESETS)}')
    return LevyMeasureSpec(**{**PRESETS[name], **overrides})


def _as_output(value: np.ndarray, scalar: bool):
    return float(value) if scalar else value


def taper(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''The tail modifier f(u), with f(0) = 1'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    if spec.taper == 'none':
        out = np.ones_like(u)
    elif spec.taper == 'exp_abs':
        out = np.exp(-np.abs(u))
    elif spec.taper == 'gauss':
        out = np.exp(-u ** 2)
    elif spec.taper == 'sech_like':
        out = np.exp(1. - np.sqrt(1. + u ** 2))
    else:
        u1 = spec.u1
        inside = np.abs(u) < u1
        safe = np.where(inside, u, 0.)
        # normalized so that f(0) = 1
        exponent = 2. / u1 - 1. / (safe + u1) - 1. / (u1 - safe)
        out = np.where(inside, np.exp(exponent), 0.)
    return _as_output(out, scalar)


def taper_log_derivative(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''f'(u) / f(u) inside the support'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    if spec.taper == 'none':
        out = np.zeros_like(u)
    elif spec.taper == 'exp_abs':
        out = -np.sign(u)
    elif spec.taper == 'gauss':
        out = -2. * u
    elif spec.taper == 'sech_like':
        out = -u / np.sqrt(1. + u ** 2)
    else:
        u1 = spec.u1
        with np.errstate(divide='ignore'):
            out = 1. / (u + u1) ** 2 - 1. / (u1 - u) ** 2
    return _as_output(out, scalar)


def _check_nonzero(u: np.ndarray):
    if np.any(u == 0):
        raise LevyModelError('The Levy density is not defined at u = 0')


def m_density(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''The Levy density m(u) = f(u) C+- |u|^(-alpha-1)'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    _check_nonzero(u)
    out = taper(spec, u) * spec.side_constant(u) * np.abs(u) ** (-spec.alpha - 1.)
    return _as_output(out, scalar)


def stable_density(alpha: float, c_plus: float, c_minus: float, u: _ARRAY) -> _ARRAY:
    '''The alpha-stable Levy density C+- |u|^(-alpha-1)'''
    return m_density(LevyMeasureSpec(alpha, c_plus, c_minus), u)


def _check_support(spec: LevyMeasureSpec, u: np.ndarray):
    _check_nonzero(u)
    outside = (np.abs(u) >= spec.support) | (spec.side_constant(u) == 0)
    if np.any(outside):
        raise LevyModelError(f'Unbounded value: {u[outside].ravel()[0]} is outside the support '
                             'of the Levy density')


def log_derivative(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''m'(u) / m(u) = -(alpha + 1) / u + f'(u) / f(u)'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    _check_support(spec, u)
    return _as_output(-(spec.alpha + 1.) / u + taper_log_derivative(spec, u), scalar)


def taper_derivative(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''The derivative m'(u) of the tapered Levy density'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    out = m_density(spec, u) * log_derivative(spec, u)
    return _as_output(out, scalar)


def tau(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''tau(u) = |u m'(u)| / m(u)'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    _check_support(spec, u)
    out = np.abs(-(spec.alpha + 1.) + u * taper_log_derivative(spec, u))
    return _as_output(out, scalar)


def chi(spec: LevyMeasureSpec, u: _ARRAY) -> _ARRAY:
    '''chi(u) = -u^2 m'(u) / m(u) - 2u = (alpha - 1) u - u^2 f'(u) / f(u)'''
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=float)
    _check_support(spec, u)
    out = (spec.alpha - 1.) * u - u ** 2 * taper_log_derivative(spec, u)
    return _as_output(out, scalar)


def magnitude_bound(spec: LevyMeasureSpec) -> float:
    '''|u| beyond which m vanishes or underflows'''
    if spec.taper == 'smooth_damp':
        return spec.u1
    return _TAPER_CUTOFF[spec.taper]


def side_integral(spec: LevyMeasureSpec, func: Callable[[float], float], lower: float,
                  upper: float, side: int, max_evaluations: Optional[int] = None) -> float:
    '''int_{lower < |u| < upper, sign(u) = side} func(u) m(u) du, in the variable s = ln|u|.

    Args:
        spec: the measure
        func: a scalar function of the signed jump size
        lower: lower bound of |u|, > 0
        upper: upper bound of |u|, may be infinite
        side: +1 or -1
        max_evaluations: quadrature evaluation budget

    Returns:
        the integral, 0 when the side carries no mass
    '''
    constant = spec.c_plus if side > 0 else spec.c_minus
    upper = min(upper, magnitude_bound(spec))
    if constant == 0 or lower >= upper:
        return 0.

    def integrand(s):
        magnitude = np.exp(s)
        value = taper(spec, side * magnitude)
        if value == 0:
            return 0.
        return func(side * magnitude) * value * magnitude ** (-spec.alpha)

    if np.isinf(upper):
        # untapered power tail, only used with decaying func
        result = integrate(integrand, np.log(lower), np.inf, max_evaluations=max_evaluations)
    else:
        result = integrate(integrand, np.log(lower), np.log(upper),
                           max_evaluations=max_evaluations)
    return constant * result.value


def tail_mass(spec: LevyMeasureSpec, a: float) -> float:
    '''mu(|u| > a)'''
    if a <= 0:
        raise LevyModelError('tail_mass needs a > 0')
    if spec.taper == 'none':
        return (spec.c_plus + spec.c_minus) * a ** (-spec.alpha) / spec.alpha
    return sum(side_integral(spec, lambda _: 1., a, np.inf, side) for side in (1, -1))


def truncated_moment(spec: LevyMeasureSpec, power: int, lower: float, upper: float) -> float:
    '''int_{lower < |u| <= upper} u^power mu(du), lower may be 0 when power > alpha'''
    total = 0.
    floor = lower
    if lower == 0:
        if power <= spec.alpha:
            raise LevyModelError(f'u^{power} is not integrable at 0 for alpha={spec.alpha}')
        floor = upper * 1e-15
    for side, constant in ((1, spec.c_plus), (-1, spec.c_minus)):
        if constant == 0:
            continue
        if spec.taper == 'none':
            total += side ** power * constant * (
                (upper ** (power - spec.alpha) - lower ** (power - spec.alpha))
                / (power - spec.alpha) if power != spec.alpha else np.log(upper / lower))
            continue
        total += side_integral(spec, lambda u: u ** power, floor, upper, side)
        if lower == 0:
            # f(u) = 1 + O(u) below the floor
            total += side ** power * constant * floor ** (power - spec.alpha) / (power - spec.alpha)
    return float(total)


def c_t(spec: LevyMeasureSpec, t: float) -> float:
    '''The drift correction t * int_{t^(1/alpha) < |u| <= 1} u m(u) du

    Zero for symmetric measures; zero with a warning when t^(1/alpha) > 1.
    '''
    if spec.symmetric:
        return 0.
    lower = t ** (1. / spec.alpha)
    if lower > 1.:
        L.warning('c_t: empty integration region for t=%s (t^(1/alpha) > 1), returning 0', t)
        return 0.
    return t * sum(side_integral(spec, lambda u: u, lower, 1., side) for side in (1, -1))


def drift_norming_factor(spec: LevyMeasureSpec, h: float) -> float:
    '''h^(-1/alpha) c_h, the factor that couples beta and gamma in the rate matrix'''
    return h ** (-1. / spec.alpha) * c_t(spec, h)


@attr.s(frozen=True)
class H1Report:
    '''Outcome of verify_h1'''
    passed = attr.ib(type=bool)
    #: max |m / m_stable - 1| over the smallest decade of the grid
    deviation = attr.ib(type=float)
    tol = attr.ib(type=float)
    #: the |u| range of the smallest decade
    decade = attr.ib(type=Tuple[float, float])
    #: the sides that were checked
    sides = attr.ib(type=Tuple[int, ...])


def verify_h1(spec: LevyMeasureSpec, tol: float = 1e-6, grid: Optional[np.ndarray] = None,
              alpha: Optional[float] = None) -> H1Report:
    '''Check that m(u) ~ C+- |u|^(-alpha-1) as u -> 0.

    Args:
        spec: the measure
        tol: tolerance on the relative deviation
        grid: positive |u| values shrinking to 0, both signs are checked
        alpha: index of the reference stable density, defaults to spec.alpha

    Returns:
        an H1Report
    '''
    grid = np.logspace(-9, -1, 81) if grid is None else np.abs(np.asarray(grid, dtype=float))
    alpha = spec.alpha if alpha is None else alpha
    smallest = grid.min()
    decade = grid[grid <= 10. * smallest]
    sides = tuple(side for side, constant in ((1, spec.c_plus), (-1, spec.c_minus))
                  if constant > 0)

    deviation = 0.
    for side in sides:
        u = side * decade
        reference = spec.side_constant(u) * np.abs(u) ** (-alpha - 1.)
        deviation = max(deviation, float(np.max(np.abs(m_density(spec, u) / reference - 1.))))
    return H1Report(passed=bool(deviation <= tol), deviation=deviation, tol=tol,
                    decade=(float(smallest), float(decade.max())), sides=sides)


@attr.s(frozen=True)
class H2Report:
    '''Outcome of verify_h2'''
    passed = attr.ib(type=bool)
    #: sup of tau over 0 < |u| <= u0
    sup_tau = attr.ib(type=float)
    #: int_{|u| > u0} tau^(2+delta) dmu
    tail_integral = attr.ib(type=float)
    #: |u| where the tail integrand was truncated, per side
    truncation = attr.ib(type=Tuple[float, ...], default=())
    diagnostic = attr.ib(type=str, default='')


def _h2_side(spec: LevyMeasureSpec, side: int) -> Tuple[float, float]:
    '''Tail integral of one side and its truncation point'''
    power = 2. + spec.delta

    def integrand(magnitude):
        value = m_density(spec, side * magnitude)
        if value == 0:
            return 0.
        return tau(spec, side * magnitude) ** power * value

    upper = magnitude_bound(spec)
    if spec.taper == 'smooth_damp':
        truncation = upper
    else:
        grid = spec.u0 * np.logspace(0, 3, 61)
        peak = max(integrand(u) for u in grid)
        truncation = spec.u0
        while integrand(truncation) >= H2_TRUNCATION * peak or truncation <= grid[-1]:
            truncation *= 2.
            if truncation > 1e300:
                raise LevyModelError('No decay of tau^(2+delta) m detected')

    value = side_integral(spec, lambda u: tau(spec, u) ** power, spec.u0, truncation, side,
                          max_evaluations=MAX_EVALUATIONS)
    if spec.taper == 'none':
        # remaining power tail beyond the truncation point, exact for a power law
        value += (spec.side_constant(side) * (spec.alpha + 1.) ** power
                  * truncation ** (-spec.alpha) / spec.alpha)
    return value, truncation


def verify_h2(spec: LevyMeasureSpec) -> H2Report:
    '''Check that tau is bounded on |u| <= u0 and that tau^(2+delta) is mu-integrable
    on |u| > u0'''
    magnitudes = spec.u0 * np.logspace(-12, 0, 2001)
    sup_tau = 0.
    for side, constant in ((1, spec.c_plus), (-1, spec.c_minus)):
        if constant > 0:
            sup_tau = max(sup_tau, float(np.max(tau(spec, side * magnitudes))))

    tail = 0.
    truncations = []
    try:
        for side, constant in ((1, spec.c_plus), (-1, spec.c_minus)):
            if constant > 0:
                value, truncation = _h2_side(spec, side)
                tail += value
                truncations.append(truncation)
    except (QuadratureError, LevyModelError) as error:
        return H2Report(passed=False, sup_tau=sup_tau, tail_integral=np.inf,
                        diagnostic=str(error))

    passed = bool(np.isfinite(sup_tau) and np.isfinite(tail))
    return H2Report(passed=passed, sup_tau=sup_tau, tail_integral=tail,
                    truncation=tuple(truncations))
