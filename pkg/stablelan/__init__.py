# SPDX-License-Identifier: Apache-2.0
'''Uniform LAN numerics for locally alpha-stable Levy processes'''


class StableLanError(Exception):
    '''Base class of the errors raised by stablelan'''
