# SPDX-License-Identifier: Apache-2.0
'''Run configuration: a JSON document converted into the domain types.

The document is first checked against the shipped JSON schema, then converted; both steps
happen before any computation. Failures raise ``ConfigError`` naming the dotted path of the
offending field, e.g. ``theta.gamma: missing``.
'''
import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import attr
import numpy as np
from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError, best_match

from stablelan import StableLanError
from stablelan.densities import DensityError, InversionSettings, NuisanceSpec
from stablelan.levy_model import PRESETS, LevyMeasureSpec, LevyModelError, Theta
from stablelan.simulator import SamplingScheme, SimulationError

L = logging.getLogger('stablelan')

SCHEMA_PATH = Path(__file__).parent / 'data' / 'config_schema.json'

LAN_CHECKS = ('triple', 'uniform', 'a3', 'martingale')
MALLIAVIN_CHECKS = ('representation', 'kappa', 'moments', 'derivative_ratio')
RESOLUTIONS = ('default', 'full', 'coarse')

_BOUNDS = {'minimum': '>=', 'exclusiveMinimum': '>', 'maximum': '<=', 'exclusiveMaximum': '<'}


class ConfigError(StableLanError):
    '''Error related to the run configuration'''


def schema() -> Dict:
    '''The JSON schema of the config document'''
    with SCHEMA_PATH.open(encoding='utf-8') as file_:
        return json.load(file_)


@lru_cache(maxsize=1)
def _validator() -> Draft7Validator:
    return Draft7Validator(schema())


def _dotted(path) -> str:
    out = ''
    for item in path:
        out += f'[{item}]' if isinstance(item, int) else (f'.{item}' if out else str(item))
    return out


def _article(name: str) -> str:
    return f'an {name}' if name[0] in 'aeiou' else f'a {name}'


def _describe(error: ValidationError) -> str:
    '''One line message for a schema violation, prefixed by the dotted path of the field'''
    path = _dotted(error.absolute_path)
    kind, value = error.validator, error.validator_value
    if kind == 'required':
        missing = [key for key in value if key not in error.instance]
        return f'{_dotted(list(error.absolute_path) + missing[:1])}: missing'
    if kind == 'additionalProperties':
        unknown = sorted(set(error.instance) - set(error.schema.get('properties', {})))
        return f'{path or "config"}: unknown key(s) {", ".join(unknown)}'
    if kind == 'type':
        names = [value] if isinstance(value, str) else value
        return (f'{path or "config"}: expected {" or ".join(_article(n) for n in names)}, '
                f'got {error.instance!r}')
    if kind in _BOUNDS:
        return f'{path}: must be {_BOUNDS[kind]} {value}'
    if kind == 'const':
        return f'{path}: expected {value!r}, got {error.instance!r}'
    if kind == 'enum':
        return f'{path}: expected one of {value}, got {error.instance!r}'
    return f'{path}: {error.message}'


def validate(document: Any):
    '''Check a config document against the schema

    Raises:
        ConfigError: naming the most relevant violation
    '''
    if not isinstance(document, dict):
        raise ConfigError('config: expected a JSON object')
    error = best_match(_validator().iter_errors(document))
    if error is not None:
        raise ConfigError(_describe(error))


def _convert(path: str, factory, *args, **kwargs):
    '''Build a domain object, turning its validation errors into ConfigError'''
    try:
        return factory(*args, **kwargs)
    except (LevyModelError, DensityError, SimulationError, TypeError, ValueError) as error:
        raise ConfigError(f'{path}: {error}') from error


def _model(block: Dict) -> LevyMeasureSpec:
    if 'preset' in block:
        overrides = {key: value for key, value in block.items() if key != 'preset'}
        return _convert('model', LevyMeasureSpec, **dict(PRESETS[block['preset']], **overrides))
    for key in ('alpha', 'c_plus', 'c_minus'):
        if key not in block:
            raise ConfigError(f'model.{key}: missing (or give a preset)')
    return _convert('model', LevyMeasureSpec, **block)


def _theta(block: Dict, path: str = 'theta') -> Theta:
    return _convert(path, Theta, block['beta'], block['gamma'])


def _nuisance(block: Dict, path: str) -> NuisanceSpec:
    if block['kind'] == 'compound_poisson' and 'rate' not in block:
        raise ConfigError(f'{path}.rate: missing')
    if block['kind'] == 'stable' and 'alpha_u' not in block:
        raise ConfigError(f'{path}.alpha_u: missing')
    return _convert(path, NuisanceSpec, **block)


def _scheme(block: Dict, path: str) -> SamplingScheme:
    return _convert(path, SamplingScheme, block['n'], block.get('h'))


@attr.s(frozen=True)
class DensityBlock:
    '''What the density command tabulates'''
    #: times, or 'limit' for the stable limit
    times = attr.ib(type=List[Union[float, str]], factory=lambda: ['limit'])
    x_min = attr.ib(type=float, default=-10.)
    x_max = attr.ib(type=float, default=10.)
    points = attr.ib(type=int, default=201)
    #: 'direct' or 'scaled'
    method = attr.ib(type=str, default='direct')
    #: one of RESOLUTIONS
    resolution = attr.ib(type=str, default='default')

    @property
    def x_grid(self) -> np.ndarray:
        '''The evaluation grid'''
        return np.linspace(self.x_min, self.x_max, self.points)

    def settings(self, spec: LevyMeasureSpec) -> Optional[InversionSettings]:
        '''Inversion resolution, None for the per-spec default'''
        if self.resolution == 'full':
            return InversionSettings()
        if self.resolution == 'coarse':
            return InversionSettings.coarse()
        return None


def _density(block: Dict) -> DensityBlock:
    out = DensityBlock(**block)
    if out.x_max <= out.x_min:
        raise ConfigError('density: x_max must exceed x_min')
    return out


@attr.s(frozen=True)
class ExperimentBlock:
    '''Monte-Carlo sizes, tolerances and the checks to run'''
    mc_size = attr.ib(type=int, default=10000)
    replications = attr.ib(type=int, default=1000)
    #: local parameters of the LAN experiments
    vs = attr.ib(type=List[Tuple[float, float]], factory=lambda: [(1., 0.), (0., 1.)],
                 converter=lambda vs: [(float(v[0]), float(v[1])) for v in vs])
    delta1 = attr.ib(type=float, default=.25)
    #: ledger truncation, chosen per time scale when None
    eps = attr.ib(type=Optional[float], default=None)
    #: 'exact' or 'ledger', chosen per measure when None
    method = attr.ib(type=Optional[str], default=None)
    #: time of the Malliavin representation check
    t = attr.ib(type=float, default=.01)
    t_grid = attr.ib(type=List[float], factory=lambda: [.1, .01, .001])
    p_list = attr.ib(type=List[float], factory=lambda: [0., 1., 2.])
    bins = attr.ib(type=int, default=40)
    #: extra parameter points of the moment sweep
    thetas = attr.ib(type=List[Theta], factory=list)
    lan_checks = attr.ib(type=List[str], factory=lambda: ['triple'])
    malliavin_checks = attr.ib(type=List[str], factory=lambda: list(MALLIAVIN_CHECKS))
    threads = attr.ib(type=int, default=1)
    cov_tolerance = attr.ib(type=float, default=.10)
    uniform_tolerance = attr.ib(type=float, default=.15)
    #: smallest correlation of Delta_n across nuisances in the uniform sweep
    correlation_threshold = attr.ib(type=float, default=.9)
    psi_threshold = attr.ib(type=float, default=.15)
    p_threshold = attr.ib(type=float, default=.01)
    rate_threshold = attr.ib(type=float, default=.2)
    #: largest share of degenerate Malliavin paths
    max_drop_rate = attr.ib(type=float, default=1e-4)


def _experiment(block: Dict, spec: LevyMeasureSpec) -> ExperimentBlock:
    path = 'experiment'
    thetas = [_theta(theta, f'{path}.thetas[{i}]')
              for i, theta in enumerate(block.get('thetas', []))]
    out = ExperimentBlock(**dict(block, thetas=thetas))
    if out.delta1 >= spec.delta:
        raise ConfigError(f'{path}.delta1: must lie in [0, {spec.delta})')
    return out


@attr.s(frozen=True)
class RunConfig:
    '''A validated run configuration'''
    spec = attr.ib(type=LevyMeasureSpec)
    theta = attr.ib(type=Theta)
    nuisances = attr.ib(type=List[NuisanceSpec])
    schemes = attr.ib(type=List[SamplingScheme])
    density = attr.ib(type=DensityBlock, factory=DensityBlock)
    experiment = attr.ib(type=ExperimentBlock, factory=ExperimentBlock)
    seed = attr.ib(type=int, default=0)
    output = attr.ib(type=Path, default=Path('.'))
    #: the source document, used for the config hash
    document = attr.ib(type=Dict, factory=dict, eq=False)

    def with_overrides(self, seed: Optional[int] = None, output: Optional[str] = None,
                       threads: Optional[int] = None,
                       mc_size: Optional[int] = None) -> 'RunConfig':
        '''Apply the command line overrides, recording them in the hashed document'''
        document = json.loads(json.dumps(self.document))
        experiment = self.experiment
        changes = {}
        if seed is not None:
            changes['seed'] = document['seed'] = int(seed)
        if output is not None:
            changes['output'] = Path(output)
        if threads is not None:
            experiment = attr.evolve(experiment, threads=threads)
            document.setdefault('experiment', {})['threads'] = threads
        if mc_size is not None:
            experiment = attr.evolve(experiment, mc_size=mc_size)
            document.setdefault('experiment', {})['mc_size'] = mc_size
        return attr.evolve(self, experiment=experiment, document=document, **changes)


def parse_config(document: Dict) -> RunConfig:
    '''Validate a config document and convert it into a RunConfig'''
    validate(document)
    spec = _model(document['model'])
    theta = _theta(document['theta'])
    nuisances = [_nuisance(block, f'nuisances[{i}]')
                 for i, block in enumerate(document.get('nuisances', []))] or [NuisanceSpec()]
    for i, nuisance in enumerate(nuisances):
        _convert(f'nuisances[{i}]', nuisance.validate, spec.alpha)
    schemes = [_scheme(block, f'schemes[{i}]')
               for i, block in enumerate(document.get('schemes', []))]
    return RunConfig(spec=spec, theta=theta, nuisances=nuisances, schemes=schemes,
                     density=_density(document.get('density', {})),
                     experiment=_experiment(document.get('experiment', {}), spec),
                     seed=document.get('seed', 0), output=Path(document.get('output', '.')),
                     document=document)


def load_config(path: Path) -> RunConfig:
    '''Read and validate a JSON config file'''
    try:
        with Path(path).open(encoding='utf-8') as file_:
            document = json.load(file_)
    except json.JSONDecodeError as error:
        raise ConfigError(f'{path}: invalid JSON at line {error.lineno}: {error.msg}') from error
    L.debug('Loaded config %s', path)
    return parse_config(document)
