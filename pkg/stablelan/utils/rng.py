# SPDX-License-Identifier: Apache-2.0
'''Counter-based random streams.

Every Monte-Carlo replication draws from its own Philox stream keyed by
(seed, role, replication index, ...) so that results do not depend on the order in which
replications are executed.
'''
from typing import Union

import numpy as np

RNG_TYPE = Union[np.random.RandomState, np.random.Generator]

#: stream roles, used as the first element of the spawn key
JUMPS = 0
GAUSS = 1
NUISANCE = 2
EXACT = 3
BRIDGE = 4
REFERENCE = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    '''A Philox generator for the given seed and key path.

    Args:
        seed: the run seed (unsigned 64 bits)
        key: integers identifying the stream, typically (role, replication, ...)
    '''
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def time_key(t: float) -> int:
    '''An integer key identifying a time value, so that draws made at the same time
    reproduce regardless of the other times requested'''
    return int(np.float64(t).view(np.uint64))
