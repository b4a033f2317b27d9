# SPDX-License-Identifier: Apache-2.0
'''CLI endpoint'''
# pylint: disable=import-outside-toplevel
import json
import logging
import sys
from contextlib import contextmanager
from functools import wraps
from pathlib import Path

import click

from stablelan import StableLanError

L = logging.getLogger('stablelan')

#: exit code of a run where some verdict failed
FAILED_VERDICT = 2


@contextmanager
def _errors():
    try:
        yield
    except StableLanError as error:
        raise click.ClickException(str(error)) from error


def _run_options(func):
    '''The options shared by every experiment command'''
    @click.option('--config', 'config_path', required=True,
                  type=click.Path(exists=True, file_okay=True, dir_okay=False),
                  help='The JSON run configuration')
    @click.option('--seed', type=click.IntRange(min=0), default=None,
                  help='Override the seed of the config')
    @click.option('--out', type=click.Path(file_okay=False), default=None,
                  help='Override the output directory of the config')
    @click.option('--threads', type=click.IntRange(min=1), default=None,
                  help='Worker threads of the Monte-Carlo drivers')
    @click.option('--mc-size', type=click.IntRange(min=1), default=None,
                  help='Override the Monte-Carlo size of the config')
    @wraps(func)
    def wrapper(config_path, seed, out, threads, mc_size, **kwargs):
        from stablelan.config import load_config
        with _errors():
            config = load_config(Path(config_path)).with_overrides(seed, out, threads, mc_size)
            config.output.mkdir(parents=True, exist_ok=True)
            passed = func(config, **kwargs)
        if passed is False:
            L.warning('Some verdicts failed, see the reports in %s', config.output)
            sys.exit(FAILED_VERDICT)
    return wrapper


def _writers(config):
    '''write_json / write_csv bound to the output folder, hash and seed of a run'''
    from stablelan.utils.io import write_csv, write_json

    def json_(name, document):
        return write_json(config.output / name, document, config.document, config.seed)

    def csv_(name, frame):
        return write_csv(config.output / name, frame, config.document, config.seed)
    return json_, csv_


def _time_label(t):
    return 'limit' if t == 'limit' else f'{t:g}'


@click.group()
@click.option('-v', '--verbose', count=True, help='-v for INFO, -vv for DEBUG')
def cli(verbose):
    '''Uniform LAN numerics for locally stable Levy processes'''
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    L.setLevel(level)


@cli.command(short_help='Print the JSON schema of the run configuration')
def schema():
    '''Print the JSON schema of the run configuration'''
    from stablelan.config import schema as config_schema
    click.echo(json.dumps(config_schema(), indent=2, sort_keys=True))


@cli.command(short_help='Tabulate transition densities')
@_run_options
def density(config):
    '''Tabulate p_t(theta; x) for every time of the density block, or the stable limit
    for the time "limit". Writes one CSV per time and density.json with the masses.
    '''
    import numpy as np
    from stablelan.densities import limit_density, transition_density
    json_, csv_ = _writers(config)
    spec, theta, block = config.spec, config.theta, config.density
    settings = block.settings(spec)
    x_grid = block.x_grid
    rows = []
    L.info('Building density tables. This may take a while...')
    for nuisance in config.nuisances:
        for t in block.times:
            if t == 'limit':
                if not nuisance.is_zero:
                    continue
                kwargs = {'settings': settings} if settings is not None else {}
                table = limit_density(spec.alpha, spec.c_plus, spec.c_minus, x_grid, **kwargs)
            else:
                table = transition_density(spec, theta, nuisance, float(t), x_grid,
                                           block.method, settings)
            name = f'density_t={_time_label(t)}_{nuisance.label}.csv'
            csv_(name, table.to_frame())
            values = table.values
            rows.append({'t': t, 'nuisance': nuisance.label, 'file': name,
                         'mass': table.mass(), 'peak': table.peak,
                         'value_at_zero': float(table.evaluate(0.)),
                         'symmetry_gap': float(np.max(np.abs(values - values[::-1]))),
                         'clipped_mass': table.meta.get('clipped_mass', 0.)})
    json_('density.json', {'tables': rows, 'method': block.method})
    return True


@cli.command(short_help='Fisher matrix, rate matrices and limit score functions')
@_run_options
def fisher(config):
    '''Sigma(theta) by quadrature and Monte-Carlo, r(n) for every scheme and the limit
    G functions.
    '''
    import numpy as np
    from stablelan.score_fisher import (fisher_matrix, fisher_matrix_mc, g_functions_limit,
                                        rate_matrices)
    from stablelan.utils.rng import stream
    json_, csv_ = _writers(config)
    spec, theta = config.spec, config.theta
    matrix = fisher_matrix(spec.alpha, spec.c_plus, spec.c_minus, theta.gamma)
    mc, mc_se = fisher_matrix_mc(spec.alpha, spec.c_plus, spec.c_minus, theta.gamma,
                                 config.experiment.mc_size, stream(config.seed))
    agreement = bool(abs(mc[0, 0] - matrix.sigma11) <= 3. * mc_se[0, 0] + matrix.error11
                     and abs(mc[1, 1] - matrix.sigma22) <= 3. * mc_se[1, 1] + matrix.error22)
    rates = []
    for scheme in config.schemes:
        rate = rate_matrices(spec, scheme)
        rates.append({'n': scheme.n, 'h': scheme.h, 'r': rate.r, 'r_tilde': rate.r_tilde,
                      'c_h': rate.c_h})
    tables = g_functions_limit(spec.alpha, spec.c_plus, spec.c_minus, np.linspace(-20, 20, 401))
    csv_('g_limit.csv', tables.to_frame())
    json_('fisher.json', dict(matrix.to_dict(), mc={'matrix': mc, 'se': mc_se,
                                                    'agreement': agreement},
                              rates=rates))
    return agreement


@cli.command(short_help='Sample paths and check the normalized increments')
@_run_options
def simulate(config):
    '''Sample one path per scheme (first nuisance), write it with its jump ledger and
    compare the normalized increments to the kernel f_h by a KS test.
    '''
    from stablelan.lan_harness import check_rate_condition
    from stablelan.score_fisher import score_model
    from stablelan.simulator import ks_to_density, normalized_increments, sample_path
    json_, csv_ = _writers(config)
    spec, theta, experiment = config.spec, config.theta, config.experiment
    nuisance = config.nuisances[0]
    method = experiment.method or ('exact' if spec.taper == 'none' else 'ledger')
    reports, passed = [], True
    for index, scheme in enumerate(config.schemes):
        eps = experiment.eps if experiment.eps is not None else (
            .1 * scheme.h ** (1. / spec.alpha))
        path = sample_path(spec, theta, nuisance, scheme, eps, config.seed, key=(index,),
                           method=method)
        csv_(f'path_n={scheme.n}.csv', path.to_frame())
        if path.ledger is not None:
            json_(f'ledger_n={scheme.n}.json', path.ledger.to_dict())
        xi = normalized_increments(path, spec, theta, scheme)
        table = score_model(spec, theta, nuisance, scheme.h).tables.f
        statistic, pvalue = ks_to_density(xi, table)
        verdict = check_rate_condition(spec.alpha, scheme, experiment.rate_threshold)
        ks_passed = pvalue >= experiment.p_threshold
        passed = passed and ks_passed
        reports.append({'n': scheme.n, 'h': scheme.h, 'method': method, 'eps': eps,
                        'jumps': path.ledger.count if path.ledger is not None else None,
                        'ks_statistic': statistic, 'ks_pvalue': pvalue, 'ks_passed': ks_passed,
                        'rate': {'passed': verdict.passed, 'value': verdict.value,
                                 'automatic': verdict.automatic}})
    json_('simulate.json', {'nuisance': nuisance.label, 'paths': reports, 'passed': passed})
    return passed


def _lan_config(config):
    from stablelan.lan_harness import LanExperimentConfig
    experiment = config.experiment
    return LanExperimentConfig(
        spec=config.spec, theta0=config.theta, schemes=config.schemes, vs=experiment.vs,
        nuisances=config.nuisances, replications=experiment.replications, seed=config.seed,
        delta1=experiment.delta1, eps=experiment.eps, method=experiment.method,
        cov_tolerance=experiment.cov_tolerance,
        uniform_tolerance=experiment.uniform_tolerance,
        correlation_threshold=experiment.correlation_threshold,
        psi_threshold=experiment.psi_threshold, p_threshold=experiment.p_threshold,
        rate_threshold=experiment.rate_threshold, threads=experiment.threads)


@cli.command(short_help='Monte-Carlo LAN decomposition')
@_run_options
def lan(config):
    '''Run the LAN checks of the experiment block: "triple" (first nuisance), "uniform"
    (every nuisance), "a3" (Lyapunov statistic over the schemes) and "martingale".
    '''
    from stablelan.lan_harness import a3_sweep, lan_triple, martingale_check, uniform_sweep
    from stablelan.score_fisher import perturb, rate_matrices
    json_, csv_ = _writers(config)
    experiment = config.experiment
    lan_config = _lan_config(config)
    document, passed = {}, True
    for check in experiment.lan_checks:
        L.info('Running the %s check', check)
        if check in ('triple', 'uniform'):
            report = lan_triple(lan_config) if check == 'triple' else uniform_sweep(lan_config)
            csv_(f'lan_{check}.csv', report.summary_frame())
            document[check] = report.to_dict()
            passed = passed and report.passed
        elif check == 'a3':
            report = a3_sweep(config.spec, config.theta, config.nuisances[0], config.schemes,
                              experiment.delta1, experiment.mc_size, config.seed)
            document[check] = {'passed': report.passed, 'estimates': report.estimates,
                               'ratios': report.ratios}
            passed = passed and report.passed
        else:
            scheme = min(config.schemes, key=lambda s: s.n)
            theta1 = perturb(rate_matrices(config.spec, scheme), config.theta,
                             experiment.vs[0] if experiment.vs else (0., 0.))
            report = martingale_check(config.spec, config.theta, theta1, config.nuisances[0],
                                      scheme, experiment.mc_size, config.seed,
                                      experiment.eps, experiment.method, experiment.threads)
            document[check] = {'passed': report.passed, 'mean': report.mean, 'se': report.se,
                               'n': scheme.n, 'theta1': theta1.as_array()}
            passed = passed and report.passed
    json_('lan.json', dict(document, passed=passed))
    return passed


@cli.command(short_help='Modified Malliavin weight checks')
@_run_options
def malliavin(config):
    '''Run the Malliavin checks of the experiment block: "representation" (binned
    E[Xi | X_t] against the score), "kappa" (inverse moments of kappa_t), "moments"
    (moment sweep over the schemes and ratio moments) and "derivative_ratio"
    (|D^2 X| / (D X)^3/2 within 2 / sqrt(gamma)).
    '''
    import numpy as np
    from stablelan.malliavin import (check_representation, default_eps,
                                     kappa_inverse_moments, kappa_small_ball_bound,
                                     moment_sweep, ratio_moments, simulate_weights)
    json_, csv_ = _writers(config)
    spec, theta, experiment = config.spec, config.theta, config.experiment
    checks = experiment.malliavin_checks
    document, passed = {}, True
    sample = None
    if 'representation' in checks or 'derivative_ratio' in checks:
        sample = simulate_weights(spec, theta, experiment.t, experiment.mc_size, config.seed,
                                  config.nuisances[0], experiment.eps,
                                  threads=experiment.threads)
        csv_('weights.csv', sample.to_frame())
        eps = sample.eps
        document['sample'] = {'t': sample.t, 'eps': eps, 'dropped': sample.dropped,
                              'requested': sample.requested,
                              'degenerate_bound': kappa_small_ball_bound(spec, sample.t, .1)}
    if 'representation' in checks:
        report = check_representation(spec, theta, experiment.t, experiment.mc_size,
                                      experiment.bins, config.seed, config.nuisances[0],
                                      threads=experiment.threads, sample=sample,
                                      max_drop_rate=experiment.max_drop_rate)
        csv_('representation_bins.csv', report.bins)
        document['representation'] = {
            'passed': report.passed, 'fraction_beta': report.fraction_beta,
            'fraction_gamma': report.fraction_gamma, 'global_mean': report.global_mean,
            'global_se': report.global_se, 'dropped': report.dropped,
            'drop_rate': report.drop_rate}
        passed = passed and report.passed
    if 'derivative_ratio' in checks:
        bound = 2. / np.sqrt(theta.gamma)
        ratio_passed = bool(sample.derivative_ratio_max <= bound)
        document['derivative_ratio'] = {'passed': ratio_passed,
                                        'max': sample.derivative_ratio_max, 'bound': bound}
        passed = passed and ratio_passed
    if 'kappa' in checks:
        report = kappa_inverse_moments(spec, experiment.t_grid, experiment.p_list,
                                       experiment.mc_size, config.seed, experiment.threads)
        csv_('kappa_moments.csv', report.to_frame())
        document['kappa'] = {'passed': report.passed, 'trends': report.trends,
                             'eps': [default_eps(spec, t) for t in experiment.t_grid]}
        passed = passed and report.passed
    if 'moments' in checks:
        thetas = [theta] + list(experiment.thetas)
        if config.schemes:
            report = moment_sweep(spec, thetas, config.schemes, experiment.delta1,
                                  experiment.mc_size, config.seed, experiment.threads,
                                  experiment.max_drop_rate)
            csv_('moment_sweep.csv', report.to_frame())
            document['moments'] = {'passed': report.passed, 'trends': report.trends,
                                   'dropped': report.dropped,
                                   'drop_rate': report.drop_rate}
            passed = passed and report.passed
        p = max(experiment.p_list) if experiment.p_list else 2.
        report = ratio_moments(spec, theta, experiment.t_grid, p, experiment.mc_size,
                               experiment.delta1, config.seed, experiment.threads,
                               experiment.max_drop_rate)
        csv_('ratio_moments.csv', report.to_frame())
        document['ratios'] = {'passed': report.passed, 'trends': report.trends,
                              'dropped': report.dropped, 'drop_rate': report.drop_rate}
        passed = passed and report.passed
    json_('malliavin.json', dict(document, passed=passed))
    return passed


@cli.command(short_help='Check the H1, H2 and rate conditions')
@_run_options
def check(config):
    '''Verify the small jump condition H1, the tail condition H2 and the rate condition of
    every scheme.
    '''
    from stablelan.lan_harness import check_rate_condition
    from stablelan.levy_model import verify_h1, verify_h2
    json_, _ = _writers(config)
    spec = config.spec
    h1 = verify_h1(spec)
    h2 = verify_h2(spec)
    rates = []
    for scheme in config.schemes:
        verdict = check_rate_condition(spec.alpha, scheme, config.experiment.rate_threshold)
        rates.append({'n': scheme.n, 'h': scheme.h, 'passed': verdict.passed,
                      'value': verdict.value, 'threshold': verdict.threshold,
                      'automatic': verdict.automatic})
    passed = h1.passed and h2.passed and all(rate['passed'] for rate in rates)
    json_('check.json', {'h1': h1, 'h2': h2, 'rates': rates, 'passed': passed})
    click.echo(f'H1: {"pass" if h1.passed else "FAIL"} (deviation {h1.deviation:.3g})')
    click.echo(f'H2: {"pass" if h2.passed else "FAIL"} (sup tau {h2.sup_tau:.3g}, '
               f'tail {h2.tail_integral:.3g}) {h2.diagnostic}'.rstrip())
    for rate in rates:
        click.echo(f'rate n={rate["n"]}: {"pass" if rate["passed"] else "FAIL"} '
                   f'({rate["value"]:.3g})')
    return passed
