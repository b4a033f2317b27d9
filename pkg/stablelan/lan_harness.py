# SPDX-License-Identifier: Apache-2.0
'''Monte-Carlo diagnostics of the LAN decomposition

    log Z_n(theta0, theta0 + r(n) v) = v^T Delta_n - v^T Sigma v / 2 + Psi_n

for sampled paths: normality and covariance of Delta_n, shrinkage of Psi_n, the Lyapunov
statistic and the uniformity over a class of nuisance processes.
'''
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
import pandas as pd

from stablelan import StableLanError
from stablelan.densities import ZERO_NUISANCE, DensityError, NuisanceSpec
from stablelan.levy_model import LevyMeasureSpec, LevyModelError, Theta
from stablelan.score_fisher import fisher_matrix, perturb, rate_matrices, score_model
from stablelan.simulator import PathSample, SamplingScheme, sample_path
from stablelan.utils.parallel import map_replications
from stablelan.utils.rng import REFERENCE, stream, time_key
from stablelan.utils.stats import (energy_test_gaussian, frobenius_deviation, ks_normal,
                                   mean_se)

L = logging.getLogger('stablelan')

MIN_REPLICATIONS = 100
INTERPOLATION_TOLERANCE = 1e-6


class HarnessError(StableLanError):
    '''Error related to the LAN experiments'''


def _to_vectors(values) -> List[Tuple[float, float]]:
    return [tuple(float(x) for x in v) for v in values]


def _to_nuisances(values) -> List[NuisanceSpec]:
    return list(values) or [ZERO_NUISANCE]


@attr.s(frozen=True)
class LanExperimentConfig:
    '''Everything a LAN experiment needs'''
    spec = attr.ib(type=LevyMeasureSpec)
    theta0 = attr.ib(type=Theta)
    schemes = attr.ib(type=List[SamplingScheme], converter=list)
    #: local parameters
    vs = attr.ib(type=List[Tuple[float, float]], converter=_to_vectors, factory=list)
    #: the nuisance class
    nuisances = attr.ib(type=List[NuisanceSpec], converter=_to_nuisances, factory=list)
    replications = attr.ib(type=int, default=1000)
    seed = attr.ib(type=int, default=0)
    #: Lyapunov exponent margin
    delta1 = attr.ib(type=float, default=.25)
    #: ledger truncation, h^(1/alpha) / 10 when not given
    eps = attr.ib(type=Optional[float], default=None)
    #: 'exact' or 'ledger', exact for untapered measures when not given
    method = attr.ib(type=Optional[str], default=None)
    cov_tolerance = attr.ib(type=float, default=.10)
    uniform_tolerance = attr.ib(type=float, default=.15)
    #: smallest correlation of Delta_n between two nuisances sharing the Z paths
    correlation_threshold = attr.ib(type=float, default=.9)
    psi_threshold = attr.ib(type=float, default=.15)
    p_threshold = attr.ib(type=float, default=.01)
    rate_threshold = attr.ib(type=float, default=.2)
    threads = attr.ib(type=int, default=1)

    def __attrs_post_init__(self):
        if self.replications < MIN_REPLICATIONS:
            raise HarnessError(f'At least {MIN_REPLICATIONS} replications are required, '
                               f'got {self.replications}')
        if not self.schemes:
            raise HarnessError('At least one sampling scheme is required')
        for nuisance in self.nuisances:
            try:
                nuisance.validate(self.spec.alpha)
            except DensityError as error:
                raise HarnessError(str(error)) from error
        for scheme in self.schemes:
            rates = rate_matrices(self.spec, scheme)
            for v in self.vs:
                try:
                    perturb(rates, self.theta0, v)
                except LevyModelError as error:
                    raise HarnessError(f'theta0 + r(n) v leaves the parameter set for n='
                                       f'{scheme.n}, v={v}') from error

    @property
    def sampling_method(self) -> str:
        '''The path sampler'''
        if self.method is not None:
            return self.method
        return 'exact' if self.spec.taper == 'none' else 'ledger'

    def eps_for(self, scheme: SamplingScheme) -> float:
        '''Ledger truncation for a scheme'''
        return self.eps if self.eps is not None else .1 * scheme.h ** (1. / self.spec.alpha)

    def sigma(self) -> np.ndarray:
        '''Sigma(theta0)'''
        return fisher_matrix(self.spec.alpha, self.spec.c_plus, self.spec.c_minus,
                             self.theta0.gamma).matrix


def _log_terms(path: PathSample, spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec,
               scheme: SamplingScheme) -> Tuple[np.ndarray, int]:
    logs, floored = score_model(spec, theta, nuisance, scheme.h).log_density(
        np.diff(path.x_values))
    return logs, int(floored.sum())


def _loglik(path: PathSample, spec: LevyMeasureSpec, theta0: Theta, theta1: Theta,
            nuisance: NuisanceSpec, scheme: SamplingScheme) -> Tuple[float, int]:
    if theta0 == theta1:
        return 0., 0
    logs1, floored1 = _log_terms(path, spec, theta1, nuisance, scheme)
    logs0, floored0 = _log_terms(path, spec, theta0, nuisance, scheme)
    return float(np.sum(logs1 - logs0)), floored0 + floored1


def loglik_ratio(path: PathSample, spec: LevyMeasureSpec, theta0: Theta, theta1: Theta,
                 nuisance: NuisanceSpec, scheme: SamplingScheme) -> float:
    '''sum_k log p_h(theta1; dX_k) - log p_h(theta0; dX_k)'''
    value, floored = _loglik(path, spec, theta0, theta1, nuisance, scheme)
    if floored:
        L.warning('%d increments hit the density floor in the likelihood ratio', floored)
    return value


def delta_n(path: PathSample, spec: LevyMeasureSpec, theta0: Theta, nuisance: NuisanceSpec,
            scheme: SamplingScheme) -> np.ndarray:
    '''Delta_n = sum_k r(n)^T g_h(theta0; dX_k)'''
    rates = rate_matrices(spec, scheme)
    scores = score_model(spec, theta0, nuisance, scheme.h).score(np.diff(path.x_values))
    return (scores @ rates.r).sum(axis=0)


def remainder_psi(path: PathSample, config: LanExperimentConfig, v,
                  delta: Optional[np.ndarray] = None,
                  sigma: Optional[np.ndarray] = None) -> float:
    '''Psi_n = log Z_n(theta0, theta0 + r(n) v) - v^T Delta_n + v^T Sigma v / 2'''
    v = np.asarray(v, dtype=float)
    scheme, nuisance = path.scheme, path.nuisance
    theta1 = perturb(rate_matrices(config.spec, scheme), config.theta0, v)
    if delta is None:
        delta = delta_n(path, config.spec, config.theta0, nuisance, scheme)
    sigma = config.sigma() if sigma is None else sigma
    loglik = loglik_ratio(path, config.spec, config.theta0, theta1, nuisance, scheme)
    return float(loglik - v @ delta + .5 * v @ sigma @ v)


@attr.s(frozen=True)
class RateVerdict:
    '''The rate condition n^-1/2 h^(1/alpha - 1) -> 0'''
    passed = attr.ib(type=bool)
    value = attr.ib(type=float)
    threshold = attr.ib(type=float)
    #: alpha <= 1, nothing to check
    automatic = attr.ib(type=bool, default=False)


def check_rate_condition(alpha: float, scheme: SamplingScheme,
                         threshold: float = .2) -> RateVerdict:
    '''Always passes for alpha <= 1, otherwise compares n^-1/2 h^(1/alpha - 1) to threshold'''
    value = scheme.rate_value(alpha)
    if alpha <= 1:
        return RateVerdict(True, value, threshold, True)
    return RateVerdict(bool(value <= threshold), value, threshold)


@attr.s(frozen=True)
class A3Estimate:
    '''n^(-delta1/2) E |r~(n)^T g_h(theta0; dX)|^(2 + delta1)'''
    n = attr.ib(type=int)
    value = attr.ib(type=float)
    se = attr.ib(type=float)


def a3_statistic(spec: LevyMeasureSpec, theta0: Theta, nuisance: NuisanceSpec,
                 scheme: SamplingScheme, delta1: float, mc_size: int, seed: int = 0,
                 eps: Optional[float] = None, method: Optional[str] = None,
                 key: Sequence[int] = ()) -> A3Estimate:
    '''Monte-Carlo estimate of the Lyapunov statistic from mc_size independent increments'''
    if not 0 <= delta1 < spec.delta:
        raise HarnessError(f'delta1 must lie in [0, {spec.delta}), got {delta1}')
    method = method or ('exact' if spec.taper == 'none' else 'ledger')
    eps = eps if eps is not None else .1 * scheme.h ** (1. / spec.alpha)
    draws = SamplingScheme(mc_size, scheme.h)
    path = sample_path(spec, theta0, nuisance, draws, eps, seed, key=tuple(key) + (scheme.n,),
                       method=method)
    rates = rate_matrices(spec, scheme)
    scores = score_model(spec, theta0, nuisance, scheme.h).score(np.diff(path.x_values))
    values = np.linalg.norm(scores @ rates.r_tilde, axis=1) ** (2. + delta1)
    value, se = mean_se(values)
    factor = scheme.n ** (-delta1 / 2.)
    return A3Estimate(scheme.n, float(factor * value), float(factor * se))


@attr.s(frozen=True)
class A3Report:
    '''The Lyapunov statistic over an n-sweep'''
    passed = attr.ib(type=bool)
    estimates = attr.ib(type=List[A3Estimate], eq=False)
    #: consecutive ratios, their standard errors and the ratios expected from the n power
    ratios = attr.ib(type=List[dict], eq=False)


def a3_sweep(spec: LevyMeasureSpec, theta0: Theta, nuisance: NuisanceSpec,
             schemes: Sequence[SamplingScheme], delta1: float, mc_size: int,
             seed: int = 0) -> A3Report:
    '''a3_statistic across schemes sorted by n: strictly decreasing when delta1 > 0, and each
    consecutive ratio within 2 SE of (n_k / n_{k+1})^(delta1 / 2)'''
    schemes = sorted(schemes, key=lambda scheme: scheme.n)
    estimates = [a3_statistic(spec, theta0, nuisance, scheme, delta1, mc_size, seed)
                 for scheme in schemes]
    ratios, passed = [], True
    for first, second in zip(estimates[:-1], estimates[1:]):
        ratio = second.value / first.value
        se = ratio * np.hypot(first.se / first.value, second.se / second.value)
        expected = (first.n / second.n) ** (delta1 / 2.)
        consistent = abs(ratio - expected) <= 2. * se
        decreasing = second.value < first.value if delta1 > 0 else True
        ratios.append({'n': second.n, 'ratio': ratio, 'se': se, 'expected': expected,
                       'consistent': bool(consistent), 'decreasing': bool(decreasing)})
        passed = passed and consistent and decreasing
    return A3Report(bool(passed), estimates, ratios)


def interpolation_error(spec: LevyMeasureSpec, theta: Theta, nuisance: NuisanceSpec,
                        t: float, seed: int = 0, points: int = 100) -> float:
    '''Largest gap between the cached table of f_t and direct inversion at random points of
    the table core'''
    model = score_model(spec, theta, nuisance, t)
    grid = model.tables.f.x_grid
    core = min(abs(grid[0]), abs(grid[-1]), 20. / model.model.lambda_s)
    z = stream(seed, REFERENCE, time_key(t)).uniform(-core, core, points)
    return float(np.max(np.abs(model.tables.f.evaluate(z) - model.model.evaluate(z).f)))


@attr.s(frozen=True)
class MartingaleReport:
    '''E exp(log Z_n) under theta0'''
    passed = attr.ib(type=bool)
    mean = attr.ib(type=float)
    se = attr.ib(type=float)


def martingale_check(spec: LevyMeasureSpec, theta0: Theta, theta1: Theta,
                     nuisance: NuisanceSpec, scheme: SamplingScheme, mc_size: int,
                     seed: int = 0, eps: Optional[float] = None, method: Optional[str] = None,
                     threads: int = 1) -> MartingaleReport:
    '''The likelihood ratio has mean 1 under theta0, within 3 SE'''
    method = method or ('exact' if spec.taper == 'none' else 'ledger')
    eps = eps if eps is not None else .1 * scheme.h ** (1. / spec.alpha)

    def replicate(i):
        path = sample_path(spec, theta0, nuisance, scheme, eps, seed, key=(i,), method=method)
        return np.exp(loglik_ratio(path, spec, theta0, theta1, nuisance, scheme))

    ratios = np.array(map_replications(replicate, mc_size, threads, 'martingale'))
    mean, se = mean_se(ratios)
    return MartingaleReport(bool(abs(mean - 1.) <= 3. * se), float(mean), float(se))


@attr.s(frozen=True)
class LanReport:
    '''Summaries and verdicts of a LAN experiment'''
    passed = attr.ib(type=bool)
    #: one row per (scheme, nuisance): Delta_n moments and normality
    deltas = attr.ib(type=List[dict], eq=False)
    #: one row per (scheme, nuisance, v): Psi_n summaries
    psis = attr.ib(type=List[dict], eq=False)
    verdicts = attr.ib(type=Dict[str, bool], eq=False)
    #: worst cases over the nuisance class
    uniform = attr.ib(type=dict, eq=False, factory=dict)
    rates = attr.ib(type=List[dict], eq=False, factory=list)
    #: paths left out after a density floor hit, with the error
    failures = attr.ib(type=List[Tuple[str, str]], eq=False, factory=list)

    def to_dict(self) -> dict:
        '''JSON friendly form'''
        return {'passed': self.passed, 'deltas': self.deltas, 'psis': self.psis,
                'verdicts': self.verdicts, 'uniform': self.uniform, 'rates': self.rates,
                'failures': [list(failure) for failure in self.failures],
                'thresholds_are_engineering_choices': True}

    def summary_frame(self) -> pd.DataFrame:
        '''One row per (scheme, nuisance, v)'''
        deltas = pd.DataFrame(self.deltas)
        psis = pd.DataFrame(self.psis)
        if psis.empty:
            return deltas
        return psis.merge(deltas, on=['n', 'h', 'nuisance'], how='left')


def _replicate(config: LanExperimentConfig, scheme_index: int, scheme: SamplingScheme,
               nuisance: NuisanceSpec, sigma: np.ndarray, index: int):
    spec, theta0 = config.spec, config.theta0
    path = sample_path(spec, theta0, nuisance, scheme, config.eps_for(scheme), config.seed,
                       key=(scheme_index, index), method=config.sampling_method)
    try:
        delta = delta_n(path, spec, theta0, nuisance, scheme)
        psis = [remainder_psi(path, config, v, delta, sigma) for v in config.vs]
    except DensityError as error:
        return None, str(error)
    return (delta, psis), None


def _summarize(config: LanExperimentConfig, sigma: np.ndarray, scheme: SamplingScheme,
               nuisance: NuisanceSpec, results) -> Tuple[dict, List[dict]]:
    deltas = np.array([result[0] for result in results])
    cov = np.cov(deltas, rowvar=False)
    centered = deltas - deltas.mean(axis=0)
    cov12_se = float(np.std(centered[:, 0] * centered[:, 1], ddof=1) / np.sqrt(len(deltas)))
    mean, se = mean_se(deltas)
    _, p_beta = ks_normal(deltas[:, 0], sigma[0, 0])
    _, p_gamma = ks_normal(deltas[:, 1], sigma[1, 1])
    energy, p_energy = energy_test_gaussian(deltas, sigma, stream(config.seed, REFERENCE,
                                                                  scheme.n))
    base = {'n': scheme.n, 'h': scheme.h, 'nuisance': nuisance.label}
    delta_row = dict(base, mean_beta=mean[0], mean_gamma=mean[1], se_beta=se[0],
                     se_gamma=se[1], cov11=cov[0, 0], cov12=cov[0, 1], cov22=cov[1, 1],
                     cov12_se=cov12_se, cov_deviation=frobenius_deviation(cov, sigma),
                     ks_p_beta=p_beta, ks_p_gamma=p_gamma, energy=energy, energy_p=p_energy,
                     replications=len(deltas))
    psi_rows = []
    for j, v in enumerate(config.vs):
        psi = np.array([result[1][j] for result in results])
        psi_rows.append(dict(base, v_beta=v[0], v_gamma=v[1], psi_mean=float(psi.mean()),
                             psi_sd=float(psi.std(ddof=1)),
                             psi_median_abs=float(np.median(np.abs(psi))),
                             psi_tail=float(np.mean(np.abs(psi) > config.psi_threshold))))
    return delta_row, psi_rows


def _off_diagonal_vanishes(rows: List[dict]) -> bool:
    '''|cov12| is non-increasing over the n-sweep and reaches 0, both within 2 SE'''
    rows = sorted(rows, key=lambda row: row['n'])
    covs = [abs(row['cov12']) for row in rows]
    ses = [row['cov12_se'] for row in rows]
    monotone = all(b <= a + 2. * se for a, b, se in zip(covs[:-1], covs[1:], ses[1:]))
    return monotone and covs[-1] <= 2. * ses[-1]


def _verdicts(config: LanExperimentConfig, deltas: List[dict], psis: List[dict],
              uniform: Optional[dict] = None) -> Dict[str, bool]:
    largest = max(scheme.n for scheme in config.schemes)
    final = [row for row in deltas if row['n'] == largest]
    tolerance = config.uniform_tolerance if uniform is not None else config.cov_tolerance
    verdicts = {
        'covariance': all(row['cov_deviation'] <= tolerance for row in final),
        'normality': all(min(row['ks_p_beta'], row['ks_p_gamma'], row['energy_p'])
                         > config.p_threshold for row in final),
        'off_diagonal': all(_off_diagonal_vanishes([row for row in deltas
                                                    if row['nuisance'] == nuisance])
                            for nuisance in {row['nuisance'] for row in deltas}),
    }
    verdicts['interpolation'] = all(row['interpolation_error'] < INTERPOLATION_TOLERANCE
                                     for row in deltas)
    shrinking = True
    for nuisance in {row['nuisance'] for row in psis}:
        for v in config.vs:
            series = sorted(((row['n'], row['psi_median_abs']) for row in psis
                             if row['nuisance'] == nuisance
                             and (row['v_beta'], row['v_gamma']) == v))
            medians = [median for _, median in series]
            if not any(medians):
                continue
            decreasing = all(b < a for a, b in zip(medians[:-1], medians[1:]))
            shrinking = shrinking and decreasing and medians[-1] < config.psi_threshold
    verdicts['psi'] = shrinking
    if uniform is not None:
        verdicts['correlation'] = (uniform.get('min_delta_correlation', -1.)
                                   >= config.correlation_threshold)
    return verdicts


def _shared_correlation(first: Dict[int, np.ndarray], second: Dict[int, np.ndarray]
                        ) -> Optional[float]:
    '''Smallest componentwise correlation of Delta_n over the replications both runs kept'''
    shared = sorted(set(first) & set(second))
    if len(shared) < 3:
        return None
    a = np.array([first[i] for i in shared])
    b = np.array([second[i] for i in shared])
    return float(min(np.corrcoef(a[:, j], b[:, j])[0, 1] for j in range(2)))


def _run(config: LanExperimentConfig, nuisances: Sequence[NuisanceSpec]) -> LanReport:
    sigma = config.sigma()
    deltas, psis, failures = [], [], []
    per_nuisance = {}
    for scheme_index, scheme in enumerate(config.schemes):
        for nuisance in nuisances:
            L.info('LAN replications for n=%d, nuisance %s', scheme.n, nuisance.label)
            outcomes = map_replications(
                lambda i, s=scheme, u=nuisance, k=scheme_index: _replicate(config, k, s, u,
                                                                           sigma, i),
                config.replications, config.threads, f'lan n={scheme.n}')
            # keyed by replication index: the same index shares its Z path across nuisances
            results = {i: result for i, (result, error) in enumerate(outcomes) if error is None}
            failures += [(f'n={scheme.n},{nuisance.label},rep={i}', error)
                         for i, (_, error) in enumerate(outcomes) if error is not None]
            if len(results) < 2:
                raise HarnessError(f'Every replication failed for n={scheme.n}, '
                                   f'{nuisance.label}')
            delta_row, psi_rows = _summarize(config, sigma, scheme, nuisance,
                                             list(results.values()))
            delta_row['interpolation_error'] = interpolation_error(
                config.spec, config.theta0, nuisance, scheme.h, config.seed)
            deltas.append(delta_row)
            psis += psi_rows
            per_nuisance[(scheme.n, nuisance.label)] = {i: result[0]
                                                        for i, result in results.items()}

    largest = max(scheme.n for scheme in config.schemes)
    final = [row for row in deltas if row['n'] == largest]
    uniform = None
    if len(nuisances) > 1:
        uniform = {'worst_cov_deviation': max(row['cov_deviation'] for row in final),
                   'worst_psi_median_abs': max((row['psi_median_abs'] for row in psis
                                                if row['n'] == largest), default=0.)}
        reference = per_nuisance[(largest, nuisances[0].label)]
        correlations = [_shared_correlation(reference, per_nuisance[(largest, nuisance.label)])
                        for nuisance in nuisances[1:]]
        correlations = [value for value in correlations if value is not None]
        if correlations:
            uniform['min_delta_correlation'] = min(correlations)

    verdicts = _verdicts(config, deltas, psis, uniform)
    rates = [attr.asdict(check_rate_condition(config.spec.alpha, scheme,
                                              config.rate_threshold))
             for scheme in config.schemes]
    for scheme, rate in zip(config.schemes, rates):
        if not rate['passed']:
            L.warning('Rate condition n^-1/2 h^(1/alpha-1) = %.3g above %g for n=%d',
                      rate['value'], rate['threshold'], scheme.n)
    if failures:
        L.warning('%d replications failed', len(failures))
    return LanReport(all(verdicts.values()), deltas, psis, verdicts, uniform or {}, rates,
                     failures)


def lan_triple(config: LanExperimentConfig) -> LanReport:
    '''Delta_n covariance and normality, and Psi_n shrinkage, for the first nuisance'''
    return _run(config, config.nuisances[:1])


def uniform_sweep(config: LanExperimentConfig) -> LanReport:
    '''lan_triple for every nuisance of the class with shared Z streams, judged on the worst
    case'''
    return _run(config, config.nuisances)
