# SPDX-License-Identifier: Apache-2.0
'''Sampling of Z, U and X on the high frequency grid.

Z is built from a jump ledger: the jumps larger than ``eps`` are drawn exactly (Poisson
count, inverse-CDF sizes), the compensated jumps below ``eps`` are replaced by a Brownian
motion with the same variance (or omitted). For the untapered measure an exact
Chambers-Mallows-Stuck sampler gives an independent route to the same increments.
'''
import logging
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import attr
import numpy as np
import pandas as pd
from scipy.special import gamma as gamma_function
from scipy.stats import kstest

from stablelan import StableLanError
from stablelan.densities import DensityTable, NuisanceSpec
from stablelan.levy_model import (LevyMeasureSpec, Theta, c_t, magnitude_bound, tail_mass,
                                  taper, truncated_moment)
from stablelan.utils.quadrature import gauss_legendre
from stablelan.utils.rng import (BRIDGE, EXACT, GAUSS, JUMPS, NUISANCE, RNG_TYPE, stream,
                                 time_key)

L = logging.getLogger('stablelan')

SMALL_JUMP_MODES = ('gauss', 'omit')
METHODS = ('ledger', 'exact')

#: default bound on the expected number of ledger jumps
COUNT_BUDGET = 10 ** 7
#: relative tolerance of the jump size inversion
INVERSION_TOLERANCE = 1e-10
#: ratio between consecutive cells of the tabulated jump size law
CELL_RATIO = 1.1


class SimulationError(StableLanError):
    '''Error related to path sampling'''


@attr.s(frozen=True)
class SamplingScheme:
    '''The grid t_k = k h, k = 0..n'''
    #: sample size
    n = attr.ib(type=int, converter=int)
    #: partition interval, 1/n when not given
    h = attr.ib(type=float, default=None)

    def __attrs_post_init__(self):
        if self.n < 1:
            raise SimulationError(f'n must be >= 1, got {self.n}')
        if self.h is None:
            object.__setattr__(self, 'h', 1. / self.n)
        object.__setattr__(self, 'h', float(self.h))
        if not 0 < self.h <= 1:
            raise SimulationError(f'h must be in (0, 1], got {self.h}')

    def rate_value(self, alpha: float) -> float:
        '''n^(-1/2) h^(1/alpha - 1)'''
        return self.n ** -.5 * self.h ** (1. / alpha - 1.)

    def valid(self, alpha: float, threshold: float = 0.2) -> bool:
        '''False when alpha > 1 and the rate condition is not small enough'''
        return alpha <= 1 or self.rate_value(alpha) <= threshold

    @property
    def times(self) -> np.ndarray:
        '''The n + 1 grid times, starting at 0'''
        return self.h * np.arange(self.n + 1)

    @property
    def horizon(self) -> float:
        '''n h'''
        return self.n * self.h


@attr.s(frozen=True, eq=False)
class JumpLedger:
    '''The jumps of Z larger than eps over [0, horizon], with the small jump bookkeeping'''
    spec = attr.ib(type=LevyMeasureSpec)
    horizon = attr.ib(type=float)
    eps = attr.ib(type=float)
    #: jump times, sorted
    times = attr.ib(type=np.ndarray)
    #: jump sizes, |size| > eps
    sizes = attr.ib(type=np.ndarray)
    #: mu(|u| > eps)
    intensity = attr.ib(type=float)
    #: int u dmu over eps < |u| <= 1, minus int u dmu over 1 < |u| <= eps when eps > 1
    compensator = attr.ib(type=float)
    #: int_{|u| <= eps} u^2 dmu
    small_variance = attr.ib(type=float)
    #: 'gauss' or 'omit'
    small_jumps = attr.ib(type=str, default='gauss')
    seed = attr.ib(type=int, default=0)
    key = attr.ib(type=Tuple[int, ...], default=())
    #: times at which the standard Brownian motion of the surrogate is stored, with 0
    grid_times = attr.ib(type=np.ndarray, factory=lambda: np.zeros(1))
    #: the standard Brownian motion at grid_times
    grid_brownian = attr.ib(type=np.ndarray, factory=lambda: np.zeros(1))

    @property
    def count(self) -> int:
        '''Number of recorded jumps'''
        return len(self.sizes)

    def jumps_up_to(self, t: float) -> np.ndarray:
        '''Sizes of the jumps in [0, t]'''
        return self.sizes[:np.searchsorted(self.times, t, side='right')]

    def bias_bound(self, t: float) -> float:
        '''Variance of the part of Z_t that is replaced or dropped'''
        return t * self.small_variance

    def truncation_biased(self, t: float) -> bool:
        '''True when eps exceeds t^(1/alpha), the scale of the jumps that carry kappa_t'''
        return self.eps > t ** (1. / self.spec.alpha)

    def brownian(self, times: np.ndarray) -> np.ndarray:
        '''The standard Brownian motion of the surrogate at arbitrary times.

        Stored values are returned as is; other times are drawn from the bridge between
        the neighbouring stored values, with a stream keyed by the time itself.
        '''
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty(len(times))
        index = np.searchsorted(self.grid_times, times)
        for i, (t, k) in enumerate(zip(times, index)):
            if k < len(self.grid_times) and self.grid_times[k] == t:
                out[i] = self.grid_brownian[k]
                continue
            normal = stream(self.seed, BRIDGE, *self.key, time_key(t)).standard_normal()
            left_t, left_w = self.grid_times[k - 1], self.grid_brownian[k - 1]
            if k == len(self.grid_times):
                out[i] = left_w + np.sqrt(t - left_t) * normal
                continue
            right_t, right_w = self.grid_times[k], self.grid_brownian[k]
            weight = (t - left_t) / (right_t - left_t)
            out[i] = (left_w + weight * (right_w - left_w)
                      + np.sqrt((t - left_t) * (right_t - t) / (right_t - left_t)) * normal)
        return out

    def to_dict(self) -> dict:
        '''A JSON friendly dump'''
        return {'horizon': self.horizon, 'eps': self.eps, 'intensity': self.intensity,
                'compensator': self.compensator, 'small_variance': self.small_variance,
                'small_jumps': self.small_jumps, 'seed': self.seed, 'key': list(self.key),
                'spec': attr.asdict(self.spec),
                'jumps': [{'time': t, 'size': u} for t, u in zip(self.times, self.sizes)]}


def _side_cells(spec: LevyMeasureSpec, eps: float, side: int):
    '''Log-spaced cells of |u| on one side with their mu-mass'''
    constant = spec.c_plus if side > 0 else spec.c_minus
    upper = magnitude_bound(spec)
    if constant == 0 or eps >= upper:
        return None
    n_cells = int(np.ceil(np.log(upper / eps) / np.log(CELL_RATIO)))
    edges = np.geomspace(eps, upper, n_cells + 1)

    def density(v):
        return constant * taper(spec, side * v) * v ** (-spec.alpha - 1.)

    return edges, gauss_legendre(density, edges[:-1], edges[1:]), density


def _invert_cells(spec: LevyMeasureSpec, cells, size: int, rng: RNG_TYPE) -> np.ndarray:
    '''Magnitudes drawn from the normalized cell masses by Newton inversion'''
    edges, masses, density = cells
    cumulative = np.cumsum(masses)
    targets = rng.uniform(size=size) * cumulative[-1]
    index = np.minimum(np.searchsorted(cumulative, targets), len(masses) - 1)
    offsets = targets - (cumulative[index] - masses[index])
    lower, upper = edges[index], edges[index + 1]

    # local power law guess, exact for the untapered measure
    alpha = spec.alpha
    fraction = np.clip(offsets / masses[index], 0., 1.)
    values = (lower ** -alpha - fraction * (lower ** -alpha - upper ** -alpha)) ** (-1. / alpha)
    for _ in range(30):
        residual = gauss_legendre(density, lower, values) - offsets
        if np.all(np.abs(residual) <= INVERSION_TOLERANCE * masses[index]):
            break
        slope = density(values)
        step = np.divide(residual, slope, out=np.zeros_like(residual), where=slope > 0)
        values = np.clip(values - step, lower, upper)
    else:
        L.warning('Jump size inversion did not reach the %g tolerance', INVERSION_TOLERANCE)
    return values


def _sample_sizes(spec: LevyMeasureSpec, eps: float, count: int, side_masses,
                  cells, rng: RNG_TYPE) -> np.ndarray:
    positive = rng.uniform(size=count) * sum(side_masses) < side_masses[0]
    sizes = np.empty(count)
    for side, mask in ((1, positive), (-1, ~positive)):
        size = int(mask.sum())
        if not size:
            continue
        if spec.taper == 'none':
            # Pareto inversion
            sizes[mask] = side * eps * (1. - rng.uniform(size=size)) ** (-1. / spec.alpha)
        else:
            sizes[mask] = side * _invert_cells(spec, cells[side], size, rng)
    return sizes


def _compensator(spec: LevyMeasureSpec, eps: float) -> float:
    if eps < 1:
        return truncated_moment(spec, 1, eps, 1.)
    if eps > 1:
        return -truncated_moment(spec, 1, 1., min(eps, magnitude_bound(spec)))
    return 0.


@attr.s(frozen=True, eq=False)
class LedgerMeasure:
    '''Jump size law above eps and small jump moments'''
    #: per side tabulated cells, empty for the untapered measure
    cells = attr.ib(type=dict)
    #: mu-mass of the jumps above eps, (positive, negative)
    side_masses = attr.ib(type=tuple)
    compensator = attr.ib(type=float)
    small_variance = attr.ib(type=float)


@lru_cache(maxsize=256)
def ledger_measure(spec: LevyMeasureSpec, eps: float) -> LedgerMeasure:
    '''The eps-dependent bookkeeping shared by every ledger of a run'''
    if spec.taper == 'none':
        cells = {}
        side_masses = (spec.c_plus * eps ** -spec.alpha / spec.alpha,
                       spec.c_minus * eps ** -spec.alpha / spec.alpha)
    else:
        cells = {side: _side_cells(spec, eps, side) for side in (1, -1)}
        side_masses = tuple(float(cells[side][1].sum()) if cells[side] is not None else 0.
                            for side in (1, -1))
    return LedgerMeasure(cells, side_masses, _compensator(spec, eps),
                         truncated_moment(spec, 2, 0., eps))


def sample_ledger(spec: LevyMeasureSpec, horizon: float, eps: float, seed: int,
                  key: Sequence[int] = (), small_jumps: str = 'gauss',
                  grid_times: Optional[np.ndarray] = None,
                  budget: int = COUNT_BUDGET) -> JumpLedger:
    '''Draw the jumps of Z larger than eps over [0, horizon].

    Args:
        spec: the Levy measure
        horizon: T
        eps: truncation level, > 0
        seed: run seed
        key: stream key of the replication
        small_jumps: 'gauss' for the Brownian surrogate, 'omit' to drop the small jumps
        grid_times: times at which the surrogate Brownian motion is stored
        budget: maximal expected number of jumps

    Returns:
        a JumpLedger
    '''
    if eps <= 0:
        raise SimulationError(f'eps must be > 0, got {eps}')
    if horizon <= 0:
        raise SimulationError(f'horizon must be > 0, got {horizon}')
    if small_jumps not in SMALL_JUMP_MODES:
        raise SimulationError(f'Unknown small jump mode {small_jumps!r}')
    key = tuple(int(k) for k in key)

    measure = ledger_measure(spec, float(eps))
    intensity = float(sum(measure.side_masses))
    expected = horizon * intensity
    if expected > budget:
        raise SimulationError(f'Expected jump count {expected:.3g} exceeds the budget {budget}'
                              f' (eps={eps})')

    rng = stream(seed, JUMPS, *key)
    count = int(rng.poisson(expected)) if expected > 0 else 0
    times = np.sort(rng.uniform(0., horizon, size=count))
    sizes = _sample_sizes(spec, eps, count, measure.side_masses, measure.cells, rng)

    grid = np.unique(np.concatenate([[0.], [] if grid_times is None else grid_times]))
    if grid[-1] > horizon * (1 + 1e-12):
        raise SimulationError('Surrogate grid extends beyond the horizon')
    gauss = stream(seed, GAUSS, *key).standard_normal(len(grid) - 1)
    brownian = np.concatenate([[0.], np.cumsum(np.sqrt(np.diff(grid)) * gauss)])

    return JumpLedger(spec=spec, horizon=float(horizon), eps=float(eps), times=times,
                      sizes=sizes, intensity=intensity, compensator=measure.compensator,
                      small_variance=measure.small_variance, small_jumps=small_jumps,
                      seed=int(seed), key=key, grid_times=grid, grid_brownian=brownian)


def z_at(ledger: JumpLedger, times) -> np.ndarray:
    '''Vectorized z_from_ledger'''
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times > ledger.horizon * (1 + 1e-12)) or np.any(times < 0):
        raise SimulationError(f'Times must lie in [0, {ledger.horizon}]')
    cumulative = np.concatenate([[0.], np.cumsum(ledger.sizes)])
    z = cumulative[np.searchsorted(ledger.times, times, side='right')] - times * ledger.compensator
    if ledger.small_jumps == 'gauss' and ledger.small_variance > 0:
        z = z + np.sqrt(ledger.small_variance) * ledger.brownian(times)
    return z


def z_from_ledger(ledger: JumpLedger, t: float) -> float:
    '''Z_t: large jumps up to t, compensator drift and small jump surrogate'''
    if t > ledger.horizon * (1 + 1e-12):
        raise SimulationError(f't={t} is beyond the ledger horizon {ledger.horizon}')
    if t == 0:
        return 0.
    return float(z_at(ledger, t)[0])


def _cms(alpha: float, beta: float, size: int, rng: RNG_TYPE) -> np.ndarray:
    '''Standard S1(alpha, beta, 1, 0) variables'''
    v = rng.uniform(-np.pi / 2., np.pi / 2., size=size)
    w = rng.exponential(size=size)
    if alpha == 1:
        bv = np.pi / 2. + beta * v
        return 2. / np.pi * (bv * np.tan(v) - beta * np.log(np.pi / 2. * w * np.cos(v) / bv))
    tan = beta * np.tan(np.pi * alpha / 2.)
    b = np.arctan(tan) / alpha
    s = (1. + tan ** 2) ** (1. / (2. * alpha))
    return (s * np.sin(alpha * (v + b)) / np.cos(v) ** (1. / alpha)
            * (np.cos(v - alpha * (v + b)) / w) ** ((1. - alpha) / alpha))


def stable_rvs(alpha: float, c_plus: float, c_minus: float, size: int,
               rng: RNG_TYPE) -> np.ndarray:
    '''Exact draws of Z_1 for the untapered measure (truncation of the compensator at 1)'''
    total = c_plus + c_minus
    beta = (c_plus - c_minus) / total
    skew = c_plus - c_minus
    standard = _cms(alpha, beta, size, rng)
    if alpha == 1:
        sigma = np.pi / 2. * total
        return sigma * standard + skew * (np.log(sigma) + 1. - np.euler_gamma)
    sigma = (-gamma_function(-alpha) * np.cos(np.pi * alpha / 2.) * total) ** (1. / alpha)
    return sigma * standard + skew / (alpha - 1.)


def sample_nuisance_increments(nuisance: NuisanceSpec, h: float, size: int,
                               rng: RNG_TYPE) -> np.ndarray:
    '''Independent increments U_{t+h} - U_t'''
    if nuisance.is_zero:
        return np.zeros(size)
    if nuisance.kind == 'stable':
        sigma = nuisance.scale * h ** (1. / nuisance.alpha_u)
        return sigma * _cms(nuisance.alpha_u, 0., size, rng)
    counts = rng.poisson(nuisance.rate * h, size=size)
    if nuisance.jump_law == 'normal':
        return nuisance.jump_std * np.sqrt(counts) * rng.standard_normal(size)
    jumps = rng.laplace(0., nuisance.jump_std / np.sqrt(2.), size=int(counts.sum()))
    totals = np.zeros(size)
    np.add.at(totals, np.repeat(np.arange(size), counts), jumps)
    return totals


@attr.s(frozen=True, eq=False)
class PathSample:
    '''Z, U and X = beta t + gamma Z + U on the grid of a scheme'''
    spec = attr.ib(type=LevyMeasureSpec)
    theta = attr.ib(type=Theta)
    nuisance = attr.ib(type=NuisanceSpec)
    scheme = attr.ib(type=SamplingScheme)
    times = attr.ib(type=np.ndarray)
    z_values = attr.ib(type=np.ndarray)
    u_values = attr.ib(type=np.ndarray)
    x_values = attr.ib(type=np.ndarray)
    seed = attr.ib(type=int)
    key = attr.ib(type=Tuple[int, ...], default=())
    #: 'ledger' or 'exact'
    method = attr.ib(type=str, default='ledger')
    #: None for the exact sampler
    ledger = attr.ib(type=Optional[JumpLedger], default=None)

    def to_frame(self) -> pd.DataFrame:
        '''Columns time, z, u, x'''
        return pd.DataFrame({'time': self.times, 'z': self.z_values, 'u': self.u_values,
                             'x': self.x_values})


def sample_path(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec,
                scheme: SamplingScheme, eps: float, seed: int, key: Sequence[int] = (),
                method: str = 'ledger', small_jumps: str = 'gauss',
                rate_threshold: Optional[float] = None) -> PathSample:
    '''Sample X on the grid of the scheme.

    Args:
        spec: the Levy measure of Z
        theta: (beta, gamma)
        nuisance: the nuisance process U
        scheme: the sampling scheme
        eps: ledger truncation level (unused by the exact method)
        seed: run seed
        key: stream key of the replication
        method: 'ledger', or 'exact' (untapered measures only)
        small_jumps: small jump mode of the ledger
        rate_threshold: if given, reject schemes violating the rate condition

    Returns:
        a PathSample
    '''
    if method not in METHODS:
        raise SimulationError(f'Unknown method {method!r}, expected one of {METHODS}')
    if rate_threshold is not None and not scheme.valid(spec.alpha, rate_threshold):
        raise SimulationError(f'Invalid scheme: n^-1/2 h^(1/alpha-1) = '
                              f'{scheme.rate_value(spec.alpha):.3g} > {rate_threshold}')
    nuisance.validate(spec.alpha)
    key = tuple(int(k) for k in key)
    times = scheme.times

    ledger = None
    if method == 'exact':
        if spec.taper != 'none':
            raise SimulationError('The exact sampler only covers the untapered measure')
        h = scheme.h
        standard = stable_rvs(spec.alpha, spec.c_plus, spec.c_minus, scheme.n,
                              stream(seed, EXACT, *key))
        increments = h ** (1. / spec.alpha) * standard - c_t(spec, h)
        z_values = np.concatenate([[0.], np.cumsum(increments)])
    else:
        ledger = sample_ledger(spec, scheme.horizon, eps, seed, key=key,
                               small_jumps=small_jumps, grid_times=times)
        z_values = z_at(ledger, times)

    u_increments = sample_nuisance_increments(nuisance, scheme.h, scheme.n,
                                              stream(seed, NUISANCE, *key))
    u_values = np.concatenate([[0.], np.cumsum(u_increments)])
    x_values = theta.beta * times + theta.gamma * z_values + u_values
    return PathSample(spec=spec, theta=theta, nuisance=nuisance, scheme=scheme, times=times,
                      z_values=z_values, u_values=u_values, x_values=x_values,
                      seed=int(seed), key=key, method=method, ledger=ledger)


def normalized_increments(path: PathSample, spec: LevyMeasureSpec, theta: Theta,
                          scheme: SamplingScheme) -> np.ndarray:
    '''xi_k = gamma^-1 h^(-1/alpha) (X_{kh} - X_{(k-1)h} - beta h + gamma c_h)'''
    if path.theta != theta:
        raise SimulationError(f'Path was sampled under {path.theta}, not {theta}')
    if path.scheme != scheme or path.spec != spec:
        raise SimulationError('Path metadata does not match the requested spec or scheme')
    h = scheme.h
    return ((np.diff(path.x_values) - theta.beta * h + theta.gamma * c_t(spec, h))
            / (theta.gamma * h ** (1. / spec.alpha)))


def ks_to_density(samples: np.ndarray, table: DensityTable) -> Tuple[float, float]:
    '''One-sample KS statistic and p-value against the CDF of a density table'''
    result = kstest(np.asarray(samples, dtype=float), table.cdf)
    return float(result.statistic), float(result.pvalue)


def expected_jump_count(spec: LevyMeasureSpec, horizon: float, eps: float) -> float:
    '''T mu(|u| > eps)'''
    return horizon * tail_mass(spec, eps)
