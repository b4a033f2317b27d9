# SPDX-License-Identifier: Apache-2.0
'''Artefact writers: JSON with stable key order, CSV through pandas'''
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional

import attr
import numpy as np
import pandas as pd

L = logging.getLogger('stablelan')

SCHEMA_VERSION = 1


def to_jsonable(obj: Any) -> Any:
    '''Convert attrs instances, numpy scalars/arrays and non finite floats to plain JSON'''
    if attr.has(type(obj)):
        return to_jsonable(attr.asdict(obj, recurse=False))
    if isinstance(obj, dict):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, complex):
        return [to_jsonable(obj.real), to_jsonable(obj.imag)]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj: Any) -> str:
    '''The canonical text of a JSON document: sorted keys, no whitespace'''
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(',', ':'))


def config_hash(config: Dict) -> str:
    '''sha256 of the canonical JSON of the config'''
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def _stamp(document: Dict, config: Optional[Dict], seed: Optional[int]) -> Dict:
    stamped = dict(to_jsonable(document))
    stamped['schema_version'] = SCHEMA_VERSION
    stamped['config_hash'] = config_hash(config) if config is not None else None
    stamped['seed'] = seed
    return stamped


def write_json(path: Path, document: Dict, config: Optional[Dict] = None,
               seed: Optional[int] = None) -> Path:
    '''Write a report as UTF-8 JSON with sorted keys, stamped with schema version,
    config hash and seed'''
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as file_:
        json.dump(_stamp(document, config, seed), file_, sort_keys=True, indent=2)
        file_.write('\n')
    L.info('Wrote %s', path)
    return path


def write_csv(path: Path, frame: pd.DataFrame, config: Optional[Dict] = None,
              seed: Optional[int] = None) -> Path:
    '''Write a table with ``DataFrame.to_csv`` plus a ``<name>.meta.json`` sidecar'''
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format='%.17g')
    write_json(path.with_name(path.stem + '.meta.json'), {'file': path.name,
                                                          'columns': list(frame.columns),
                                                          'rows': len(frame)},
               config, seed)
    return path
