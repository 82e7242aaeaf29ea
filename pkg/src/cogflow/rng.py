"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, particle, counter)`` so
results never depend on how particles are split across workers. The block
function is Philox4x64-10, vectorized over numpy ``uint64`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "philox4x64",
    "RngStreams",
    "TIME",
    "SPACE",
    "INIT",
    "NOISE",
    "SWITCH",
]

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_U53 = 2.0**-53

# Stream tags, mixed into the second key word.
TIME = 0x54494D45
SPACE = 0x53504143
INIT = 0x494E4954
NOISE = 0x4E4F4953
SWITCH = 0x53574954


def _mulhilo(a, b):
    alo = a & _LO32
    ahi = a >> _S32
    blo = b & _LO32
    bhi = b >> _S32
    ll = alo * blo
    lh = alo * bhi
    hl = ahi * blo
    hh = ahi * bhi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, a * b


def philox4x64(counter, key, rounds: int = 10):
    """Philox4x64 block function.

    Parameters
    ----------
    counter : sequence of 4 array_like
        Counter words; broadcast against each other.
    key : sequence of 2 int
        Key words.

    Returns
    -------
    tuple of 4 ndarray of uint64
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*[np.asarray(c, dtype=np.uint64) for c in counter])
    k0 = np.uint64(key[0])
    k1 = np.uint64(key[1])
    with np.errstate(over="ignore"):
        for _ in range(rounds):
            hi0, lo0 = _mulhilo(c0, _M0)
            hi1, lo1 = _mulhilo(c2, _M1)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _W0
            k1 = k1 + _W1
    return c0, c1, c2, c3


@dataclass(frozen=True)
class RngStreams:
    """Per-particle independent streams derived from one master seed.

    A draw is addressed by ``(stream, particle, counter, lane)``. The time
    stream feeds jump epochs, the space stream feeds jump targets, and the
    init stream feeds initial conditions; none consumes another's state.
    """

    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def bits(self, stream: int, particle, counter, lane=0):
        key = (int(self.seed), int(stream))
        return philox4x64((particle, counter, lane, 0), key)[0]

    def uniform(self, stream: int, particle, counter, lane=0):
        """Uniform draws on [0, 1) with 53-bit resolution."""
        return (self.bits(stream, particle, counter, lane) >> np.uint64(11)).astype(np.float64) * _U53

    def open_uniform(self, stream: int, particle, counter, lane=0):
        """Uniform draws on the open interval (0, 1)."""
        return ((self.bits(stream, particle, counter, lane) >> np.uint64(11)).astype(np.float64) + 0.5) * _U53

    def exponential(self, stream: int, rate: float, particle, counter, lane=0):
        return -np.log1p(-self.uniform(stream, particle, counter, lane)) / rate

    def normal(self, stream: int, particle, counter, lane=0):
        return ndtri(self.open_uniform(stream, particle, counter, lane))

    def generator(self, stream: int, index: int) -> np.random.Generator:
        """Sequential numpy generator for bulk draws along one path.

        Uses the same Philox keying; the top counter word is set to 1 so the
        block space never meets the one addressed by :meth:`bits`.
        """
        # uint64 arrays: numpy mis-casts python ints >= 2**63 given in a list
        key = np.array([int(self.seed), int(stream)], dtype=np.uint64)
        ctr = np.array([0, int(index), 0, 1], dtype=np.uint64)
        bg = np.random.Philox(key=key, counter=ctr)
        return np.random.Generator(bg)
