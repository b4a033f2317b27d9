# SPDX-License-Identifier: Apache-2.0
'''Path functionals of the jump ledger and the modified Malliavin weight.

With D X_t = gamma sum u^2, D^2 X_t = 2 gamma sum u^3 and delta_t(1) the compensated sum of
chi(u) = -u^2 m'(u) / m(u) - 2u, the weight

    Xi^beta = t delta / D + t D^2 / D^2,   Xi^gamma = Z_t delta / D + Z_t D^2 / D^2 - 1 / gamma

satisfies E[Xi | X_t = x] = g_t(theta; x). Everything below the ledger truncation eps enters
through its compensator: the mean of the small squares is added to D and kappa, and the
linear part (alpha - 1) u of chi is carried by the Gaussian surrogate of Z.
'''
import logging
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import attr
import numpy as np
import pandas as pd

from stablelan import StableLanError
from stablelan.densities import ZERO_NUISANCE, NuisanceSpec
from stablelan.levy_model import (LevyMeasureSpec, Theta, c_t, chi, m_density, side_integral,
                                  tail_mass, truncated_moment)
from stablelan.score_fisher import rate_matrices, score_model
from stablelan.simulator import (JumpLedger, SamplingScheme, sample_ledger,
                                 sample_nuisance_increments, z_from_ledger)
from stablelan.utils.parallel import map_replications
from stablelan.utils.rng import NUISANCE, stream
from stablelan.utils.stats import log_log_trend, mean_se, tail_share

L = logging.getLogger('stablelan')

PATCH_MODES = ('mean', 'raw')
#: the ledger truncation used by default, as a fraction of t^(1/alpha)
EPS_FRACTION = .1
MIN_BIN_SIZE = 500
#: share of sum(|x|) carried by the top 0.1% of samples above which a moment is unstable
UNSTABLE_SHARE = .5
RETRY_FACTOR = 4
#: share of degenerate paths above which a Monte-Carlo check fails
MAX_DROP_RATE = 1e-4


class MalliavinError(StableLanError):
    '''Error related to the Malliavin functionals and their Monte-Carlo checks'''


@attr.s(frozen=True)
class MalliavinFunctionals:
    '''D_t X, D^2_t X, delta_t(1), kappa_t and Z~_t of one path'''
    d1 = attr.ib(type=float)
    d2 = attr.ib(type=float)
    delta1 = attr.ib(type=float)
    kappa = attr.ib(type=float)
    #: Z_t + c_t
    z_tilde = attr.ib(type=float)
    #: Z_t
    z = attr.ib(type=float)
    gamma = attr.ib(type=float)
    alpha = attr.ib(type=float)
    #: variances (d1, kappa, delta1) or means (d2) of the parts below eps left out
    bias = attr.ib(type=Dict[str, float], factory=dict, eq=False)
    #: eps > t^(1/alpha)
    truncation_biased = attr.ib(type=bool, default=False)
    #: kappa positivity cannot be guaranteed
    degenerate = attr.ib(type=bool, default=False)
    #: t > u0^alpha, delta1 still uses u0
    regime_switch = attr.ib(type=bool, default=False)

    @property
    def derivative_ratio(self) -> float:
        '''|D^2 X| / (D X)^(3/2), bounded by 2 / sqrt(gamma)'''
        return abs(self.d2) / self.d1 ** 1.5 if self.d1 > 0 else np.inf


@lru_cache(maxsize=256)
def _chi_compensator(spec: LevyMeasureSpec, eps: float) -> float:
    '''int chi dmu over eps < |u| <= u0, minus the integral over u0 < |u| <= eps'''
    u0 = spec.u0
    if eps == u0:
        return 0.
    lower, upper, sign = (eps, u0, 1.) if eps < u0 else (u0, eps, -1.)
    if spec.taper == 'none':
        return sign * (spec.alpha - 1.) * truncated_moment(spec, 1, lower, upper)
    return sign * sum(side_integral(spec, lambda u: chi(spec, u), lower, upper, side)
                      for side in (1, -1))


@lru_cache(maxsize=256)
def _small_moments(spec: LevyMeasureSpec, eps: float) -> Dict[str, float]:
    fourth = truncated_moment(spec, 4, 0., eps)
    out = {'d1': fourth, 'kappa': fourth, 'd2': truncated_moment(spec, 3, 0., eps)}
    if spec.taper == 'none':
        out['delta1'] = 0.
    else:
        # chi(u) - (alpha - 1) u = -u^2 f'/f, small against u near 0
        out['delta1'] = sum(side_integral(
            spec, lambda u: (chi(spec, u) - (spec.alpha - 1.) * u) ** 2, eps * 1e-12, eps, side)
            for side in (1, -1))
    return out


def _boundary_term(spec: LevyMeasureSpec, t: float) -> float:
    '''t u0^2 (m(u0) - m(-u0))'''
    u0 = spec.u0
    return t * u0 ** 2 * float(m_density(spec, u0) - m_density(spec, -u0))


def functionals_from_ledger(ledger: JumpLedger, spec: LevyMeasureSpec, theta: Theta, t: float,
                            patch: str = 'mean') -> MalliavinFunctionals:
    '''The functionals of the path recorded in ``ledger`` at time t.

    Args:
        ledger: a ledger with horizon >= t
        spec: the measure the ledger was drawn from
        theta: (beta, gamma)
        t: the time
        patch: 'mean' adds t int_{|u| <= eps} u^2 dmu to D X and kappa, 'raw' does not
    '''
    if patch not in PATCH_MODES:
        raise MalliavinError(f'Unknown patch mode {patch!r}')
    if ledger.spec != spec:
        raise MalliavinError('The ledger was drawn from another measure')
    if t > ledger.horizon * (1 + 1e-12):
        raise MalliavinError(f't={t} is beyond the ledger horizon {ledger.horizon}')
    gamma, alpha, eps = theta.gamma, spec.alpha, ledger.eps
    jumps = ledger.jumps_up_to(t)
    scale = t ** (1. / alpha)
    squares = jumps ** 2
    small_mass = t * ledger.small_variance if patch == 'mean' else 0.

    d1 = gamma * (squares.sum() + small_mass)
    d2 = 2. * gamma * np.sum(jumps ** 3)
    kappa = squares[np.abs(jumps) <= scale].sum() + (small_mass if eps <= scale else 0.)

    magnitudes = np.abs(jumps)
    chi_values = chi(spec, jumps) if len(jumps) else np.zeros(0)
    delta1 = chi_values.sum() - t * _chi_compensator(spec, eps) + _boundary_term(spec, t)
    if ledger.small_jumps == 'gauss':
        # the linear part of chi on the small jumps is (alpha - 1) times their compensated sum
        delta1 += (alpha - 1.) * np.sqrt(ledger.small_variance) * ledger.brownian(t)[0]

    z = z_from_ledger(ledger, t)
    biased = ledger.truncation_biased(t)
    moments = _small_moments(spec, eps)
    bias = {'d1': t * moments['d1'], 'kappa': t * moments['kappa'], 'd2': t * moments['d2'],
            'delta1': t * moments['delta1'] if ledger.small_jumps == 'gauss'
            else t * ledger.small_variance * (alpha - 1.) ** 2 + t * moments['delta1']}
    degenerate = d1 <= 0 or (biased and not (magnitudes <= scale).any())
    if degenerate:
        L.debug('Degenerate Malliavin functionals at t=%g (%d jumps)', t, len(jumps))
    return MalliavinFunctionals(d1=float(d1), d2=float(d2), delta1=float(delta1),
                                kappa=float(kappa), z_tilde=z + c_t(spec, t), z=z,
                                gamma=gamma, alpha=alpha, bias=bias, truncation_biased=biased,
                                degenerate=bool(degenerate),
                                regime_switch=t > spec.u0 ** alpha)


@attr.s(frozen=True)
class ModifiedWeight:
    '''Xi = (Xi^beta, Xi^gamma) and the scaled weight r~(n)^T Xi'''
    xi_beta = attr.ib(type=float)
    xi_gamma = attr.ib(type=float)
    scaled = attr.ib(type=np.ndarray, eq=False)


def modified_weight(functionals: MalliavinFunctionals, theta: Theta, t: float,
                    z_t: Optional[float] = None) -> ModifiedWeight:
    '''The modified Malliavin weight of a path.

    Args:
        functionals: the path functionals
        theta: (beta, gamma)
        t: the time
        z_t: Z_t, taken from the functionals when not given

    Returns:
        a ModifiedWeight, whose scaled form uses Z~_t and t^(1/alpha)
    '''
    if functionals.degenerate or functionals.d1 <= 0:
        raise MalliavinError('Degenerate path: D_t X = 0 or kappa_t not guaranteed')
    z_t = functionals.z if z_t is None else z_t
    z_tilde = functionals.z_tilde - functionals.z + z_t
    d1, d2, delta1 = functionals.d1, functionals.d2, functionals.delta1
    ratio = delta1 / d1 + d2 / d1 ** 2
    xi_beta = t * ratio
    xi_gamma = z_t * ratio - 1. / theta.gamma
    scaled = np.array([t ** (1. / functionals.alpha) * ratio,
                       z_tilde * ratio - 1. / theta.gamma])
    return ModifiedWeight(float(xi_beta), float(xi_gamma), scaled)


@attr.s(frozen=True, eq=False)
class WeightSample:
    '''Monte-Carlo draws of (X_t, Xi_t) and the path functionals'''
    t = attr.ib(type=float)
    eps = attr.ib(type=float)
    x = attr.ib(type=np.ndarray)
    z = attr.ib(type=np.ndarray)
    xi = attr.ib(type=np.ndarray)
    #: r~^T Xi with t playing the role of h
    scaled = attr.ib(type=np.ndarray)
    d1 = attr.ib(type=np.ndarray)
    d2 = attr.ib(type=np.ndarray)
    delta1 = attr.ib(type=np.ndarray)
    kappa = attr.ib(type=np.ndarray)
    #: number of degenerate paths left out
    dropped = attr.ib(type=int, default=0)
    requested = attr.ib(type=int, default=0)

    @property
    def drop_rate(self) -> float:
        '''Share of the requested paths left out as degenerate'''
        return self.dropped / self.requested if self.requested else 0.

    @property
    def derivative_ratio_max(self) -> float:
        '''Largest |D^2 X| / (D X)^(3/2) over the kept paths'''
        return float(np.max(np.abs(self.d2) / self.d1 ** 1.5)) if len(self.d1) else 0.

    def to_frame(self) -> pd.DataFrame:
        '''Raw (X_t, Xi_t) pairs with the functionals'''
        return pd.DataFrame({'x': self.x, 'z': self.z, 'xi_beta': self.xi[:, 0],
                             'xi_gamma': self.xi[:, 1], 'd1': self.d1, 'd2': self.d2,
                             'delta1': self.delta1, 'kappa': self.kappa})


def default_eps(spec: LevyMeasureSpec, t: float) -> float:
    '''t^(1/alpha) / 10'''
    return EPS_FRACTION * t ** (1. / spec.alpha)


def simulate_weights(spec: LevyMeasureSpec, theta: Theta, t: float, mc_size: int, seed: int,
                     nuisance: NuisanceSpec = ZERO_NUISANCE, eps: Optional[float] = None,
                     patch: str = 'mean', threads: int = 1, key: Sequence[int] = ()
                     ) -> WeightSample:
    '''Draw mc_size independent paths up to t and evaluate their weights.

    Replication i uses the streams keyed by (key..., i); the weight only depends on the
    jump and surrogate streams, never on the nuisance.
    '''
    eps = default_eps(spec, t) if eps is None else eps
    key = tuple(key)

    def replicate(index):
        ledger = sample_ledger(spec, t, eps, seed, key=key + (index,), grid_times=[t])
        functionals = functionals_from_ledger(ledger, spec, theta, t, patch)
        u = sample_nuisance_increments(nuisance, t, 1, stream(seed, NUISANCE, *key, index))[0]
        x = theta.beta * t + theta.gamma * functionals.z + u
        if functionals.degenerate:
            return None
        return x, functionals, modified_weight(functionals, theta, t)

    results = [r for r in map_replications(replicate, mc_size, threads, 'weights')
               if r is not None]
    dropped = mc_size - len(results)
    if dropped:
        L.warning('%d of %d paths dropped as degenerate (t=%g, eps=%g)', dropped, mc_size, t, eps)
    if not results:
        raise MalliavinError(f'All {mc_size} paths are degenerate (t={t:g}, eps={eps:g})')
    functionals = [r[1] for r in results]
    return WeightSample(
        t=t, eps=eps, x=np.array([r[0] for r in results]),
        z=np.array([f.z for f in functionals]),
        xi=np.array([[r[2].xi_beta, r[2].xi_gamma] for r in results]).reshape(-1, 2),
        scaled=np.array([r[2].scaled for r in results]).reshape(-1, 2),
        d1=np.array([f.d1 for f in functionals]), d2=np.array([f.d2 for f in functionals]),
        delta1=np.array([f.delta1 for f in functionals]),
        kappa=np.array([f.kappa for f in functionals]),
        dropped=dropped, requested=mc_size)


def _trend_passes(times: Sequence[float], estimates, ses) -> Dict[str, float]:
    '''Slope of log(estimate) against log(1/t): no upward trend as t -> 0 means
    slope <= 2 SE'''
    slope, se = log_log_trend(1. / np.asarray(times, dtype=float), estimates, ses)
    return {'slope': slope, 'slope_se': se, 'passed': bool(slope <= 2. * se)}


@attr.s(frozen=True)
class MomentReport:
    '''Monte-Carlo moment estimates and the trend verdicts'''
    passed = attr.ib(type=bool)
    #: one row per estimate
    rows = attr.ib(type=List[dict], eq=False)
    #: one entry per trend that was tested
    trends = attr.ib(type=List[dict], eq=False, factory=list)
    dropped = attr.ib(type=int, default=0)
    requested = attr.ib(type=int, default=0)

    @property
    def drop_rate(self) -> float:
        '''Share of the simulated paths left out as degenerate'''
        return self.dropped / self.requested if self.requested else 0.

    def to_frame(self) -> pd.DataFrame:
        '''The estimate rows'''
        return pd.DataFrame(self.rows)


def kappa_inverse_moments(spec: LevyMeasureSpec, t_grid: Sequence[float],
                          p_list: Sequence[float], mc_size: int, seed: int = 0,
                          threads: int = 1) -> MomentReport:
    '''E (t^(-2/alpha) kappa_t)^(-p) for every t and p, with eps = t^(1/alpha) / 10'''
    rows, trends = [], []
    estimates = {p: [] for p in p_list}
    for index, t in enumerate(t_grid):
        eps = default_eps(spec, t)

        def replicate(i, t=t, eps=eps, index=index):
            ledger = sample_ledger(spec, t, eps, seed, key=(index, i), small_jumps='omit')
            jumps = ledger.jumps_up_to(t)
            scale = t ** (1. / spec.alpha)
            kappa = np.sum(jumps[np.abs(jumps) <= scale] ** 2) + t * ledger.small_variance
            return kappa * t ** (-2. / spec.alpha)

        normalized = np.array(map_replications(replicate, mc_size, threads, f'kappa t={t:g}'))
        for p in p_list:
            value, se = mean_se(normalized ** -float(p))
            estimates[p].append((float(value), float(se)))
            rows.append({'t': t, 'p': p, 'estimate': float(value), 'se': float(se),
                         'eps': eps, 'min': float(normalized.min())})
    for p in p_list:
        values = np.array(estimates[p])
        trend = _trend_passes(t_grid, values[:, 0], values[:, 1])
        trends.append(dict(trend, p=p))
    passed = all(trend['passed'] for trend in trends) and all(
        np.isfinite(row['estimate']) for row in rows)
    return MomentReport(passed, rows, trends)


@attr.s(frozen=True)
class RepresentationReport:
    '''Binned regression of Xi on X_t against the analytic score'''
    passed = attr.ib(type=bool)
    #: share of the bins that agree, per component
    fraction_beta = attr.ib(type=float)
    fraction_gamma = attr.ib(type=float)
    bins = attr.ib(type=pd.DataFrame, eq=False)
    #: mean of Xi over every path and its standard error
    global_mean = attr.ib(type=np.ndarray, eq=False)
    global_se = attr.ib(type=np.ndarray, eq=False)
    dropped = attr.ib(type=int, default=0)
    derivative_ratio_max = attr.ib(type=float, default=0.)
    drop_rate = attr.ib(type=float, default=0.)


def check_representation(spec: LevyMeasureSpec, theta: Theta, t: float, mc_size: int,
                         bins: int, seed: int = 0, nuisance: NuisanceSpec = ZERO_NUISANCE,
                         eps: Optional[float] = None, threads: int = 1,
                         sample: Optional[WeightSample] = None,
                         required_share: float = .95,
                         max_drop_rate: float = MAX_DROP_RATE) -> RepresentationReport:
    '''Bin the simulated X_t in equal-count bins and compare the bin means of Xi to the bin
    means of the analytic score g_t(theta; X_t); fails when a share of at least
    max_drop_rate of the paths was dropped as degenerate'''
    if mc_size // bins < MIN_BIN_SIZE:
        raise MalliavinError(f'{mc_size} samples in {bins} bins: fewer than {MIN_BIN_SIZE} '
                             'samples per bin')
    sample = sample or simulate_weights(spec, theta, t, mc_size, seed, nuisance, eps,
                                        threads=threads)
    model = score_model(spec, theta, nuisance, t)
    scores = model.score(sample.x)

    order = np.argsort(sample.x)
    rows = []
    for chunk in np.array_split(order, bins):
        row = {'x_low': float(sample.x[chunk[0]]), 'x_high': float(sample.x[chunk[-1]]),
               'count': len(chunk)}
        for j, name in enumerate(('beta', 'gamma')):
            difference = sample.xi[chunk, j] - scores[chunk, j]
            value, se = mean_se(difference)
            row.update({f'xi_{name}': float(sample.xi[chunk, j].mean()),
                        f'g_{name}': float(scores[chunk, j].mean()),
                        f'se_{name}': float(se),
                        f'ok_{name}': bool(abs(value) <= 3. * se)})
        rows.append(row)
    table = pd.DataFrame(rows)
    fraction_beta = float(table['ok_beta'].mean())
    fraction_gamma = float(table['ok_gamma'].mean())
    global_mean, global_se = mean_se(sample.xi)
    return RepresentationReport(
        passed=(fraction_beta >= required_share and fraction_gamma >= required_share
                and sample.drop_rate < max_drop_rate),
        fraction_beta=fraction_beta, fraction_gamma=fraction_gamma, bins=table,
        global_mean=global_mean, global_se=global_se, dropped=sample.dropped,
        derivative_ratio_max=sample.derivative_ratio_max,
        drop_rate=sample.drop_rate)


def _stable_moment(draws_for, size: int, power: float):
    '''Mean of |x|^power, retried once with a larger budget when a handful of samples carry
    the estimate'''
    values = np.abs(draws_for(size)) ** power
    unstable = tail_share(values) > UNSTABLE_SHARE
    if unstable:
        L.warning('Moment dominated by the top 0.1%% of %d samples, retrying with %d',
                  size, RETRY_FACTOR * size)
        values = np.abs(draws_for(RETRY_FACTOR * size)) ** power
        unstable = tail_share(values) > UNSTABLE_SHARE
    value, se = mean_se(values)
    return float(value), float(se), bool(unstable), len(values)


def moment_sweep(spec: LevyMeasureSpec, thetas: Sequence[Theta],
                 schemes: Sequence[SamplingScheme], delta1_exp: float, mc_size: int,
                 seed: int = 0, threads: int = 1,
                 max_drop_rate: float = MAX_DROP_RATE) -> MomentReport:
    '''E |r~(n)^T Xi_h|^(2 + delta1) across schemes and theta, with a no-upward-trend verdict
    in n per theta and a verdict on the share of degenerate paths'''
    if not 0 <= delta1_exp < spec.delta:
        raise MalliavinError(f'delta1 must lie in [0, {spec.delta}), got {delta1_exp}')
    power = 2. + delta1_exp
    rows, trends, dropped, requested = [], [], 0, 0
    for i, theta in enumerate(thetas):
        estimates = []
        for j, scheme in enumerate(schemes):
            h = scheme.h
            rates = rate_matrices(spec, scheme)

            def draws(size, theta=theta, h=h, key=(i, j)):
                nonlocal dropped, requested
                sample = simulate_weights(spec, theta, h, size, seed, threads=threads,
                                          key=key + (size,))
                dropped += sample.dropped
                requested += sample.requested
                return np.linalg.norm(sample.xi @ rates.r_tilde, axis=1)

            value, se, unstable, size = _stable_moment(draws, mc_size, power)
            estimates.append((value, se))
            rows.append({'beta': theta.beta, 'gamma': theta.gamma, 'n': scheme.n, 'h': h,
                         'estimate': value, 'se': se, 'unstable': unstable, 'size': size})
        values = np.array(estimates)
        slope, slope_se = log_log_trend([s.n for s in schemes], values[:, 0], values[:, 1])
        trends.append({'beta': theta.beta, 'gamma': theta.gamma, 'slope': slope,
                       'slope_se': slope_se, 'passed': bool(slope <= 2. * slope_se)})
    passed = (all(trend['passed'] for trend in trends)
              and all(np.isfinite(row['estimate']) for row in rows)
              and dropped < max_drop_rate * requested)
    return MomentReport(passed, rows, trends, dropped, requested)


def kappa_small_ball_bound(spec: LevyMeasureSpec, t: float, eps: float) -> float:
    '''exp(-t mu(eps t^(1/alpha) <= |u| <= t^(1/alpha))), a bound of
    P(t^(-2/alpha) kappa_t < eps^2)'''
    scale = t ** (1. / spec.alpha)
    return float(np.exp(-t * (tail_mass(spec, eps * scale) - tail_mass(spec, scale))))


def ratio_moments(spec: LevyMeasureSpec, theta: Theta, t_grid: Sequence[float], p: float,
                  mc_size: int, delta1_exp: float = 0., seed: int = 0,
                  threads: int = 1,
                  max_drop_rate: float = MAX_DROP_RATE) -> MomentReport:
    '''E (t^(1/alpha) / sqrt(D X))^p, E |Z~ / sqrt(D X)|^p and E |delta / sqrt(D X)|^(2 + delta1)
    across t, each with the no-upward-trend verdict, and a verdict on the share of
    degenerate paths'''
    rows, trends, dropped, requested = [], [], 0, 0
    series = {'scale': [], 'z_tilde': [], 'delta1': []}
    for index, t in enumerate(t_grid):
        sample = simulate_weights(spec, theta, t, mc_size, seed, threads=threads, key=(index,))
        dropped += sample.dropped
        requested += sample.requested
        root = np.sqrt(sample.d1)
        quantities = {
            'scale': (t ** (1. / spec.alpha) / root) ** p,
            'z_tilde': np.abs((sample.z + c_t(spec, t)) / root) ** p,
            'delta1': np.abs(sample.delta1 / root) ** (2. + delta1_exp),
        }
        for name, values in quantities.items():
            value, se = mean_se(values)
            series[name].append((float(value), float(se)))
            rows.append({'t': t, 'quantity': name, 'estimate': float(value), 'se': float(se)})
    for name, values in series.items():
        values = np.array(values)
        trends.append(dict(_trend_passes(t_grid, values[:, 0], values[:, 1]), quantity=name))
    passed = (all(trend['passed'] for trend in trends)
              and all(np.isfinite(row['estimate']) for row in rows)
              and dropped < max_drop_rate * requested)
    return MomentReport(passed, rows, trends, dropped, requested)
