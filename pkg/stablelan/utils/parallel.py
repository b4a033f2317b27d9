# SPDX-License-Identifier: Apache-2.0
'''Thread pool driver for Monte-Carlo replications'''
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

from tqdm import tqdm

L = logging.getLogger('stablelan')

T = TypeVar('T')


def progress_disabled() -> bool:
    '''Progress bars are only shown when the package logger is at INFO or more verbose'''
    return not L.isEnabledFor(logging.INFO)


def map_replications(func: Callable[[int], T], count: int, threads: int = 1,
                     desc: str = 'replications') -> List[T]:
    '''Apply ``func`` to range(count) and return the results in index order.

    Each call is expected to build its own random stream from the index, so the outcome does
    not depend on ``threads``.
    '''
    if threads <= 1:
        return [func(i) for i in tqdm(range(count), desc=desc, disable=progress_disabled())]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(tqdm(executor.map(func, range(count)), total=count, desc=desc,
                         disable=progress_disabled()))
