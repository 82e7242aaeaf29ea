#!/usr/bin/env python3
"""Recompute the constants frozen into the test suite with independent tools.

mpmath (30 digits) is used when installed; otherwise the stdlib math module.
"""

import math

import numpy as np

from cogflow.rng import philox4x64

try:
    import mpmath

    mpmath.mp.dps = 30
    exp = lambda v: mpmath.e ** mpmath.mpf(v)
    source = "mpmath, 30 digits"
except ImportError:  # pragma: no cover
    exp = math.exp
    source = "math"


def main():
    print(f"# exponentials ({source})")
    for v in (-1.0, 1.0, -0.5, -20.0):
        print(f"exp({v:g}) = {float(exp(v))!r}")
    print("# softmax-score kernel, beta=2, centers 0 and 1, x=0")
    w0, w1 = exp(0.0), exp(-2.0)
    print(f"probabilities = ({float(w0 / (w0 + w1))!r}, {float(w1 / (w0 + w1))!r})")
    print("# never-jumped fraction at rate 1, t 1, N 1e6")
    p = float(exp(-1.0))
    print(f"p = {p:.5f}, 4 sigma = {4 * math.sqrt(p * (1 - p) / 1e6):.5f}, complement = {1 - p:.5f}")
    print("# Poisson(20) jump counts over N=1e5 particles: 4 sigma bands")
    lam, n = 20.0, 1e5
    print(f"mean +/- {4 * math.sqrt(lam / n):.4f}, variance +/- {4 * math.sqrt((lam + 2 * lam**2) / n):.4f}")
    print("# Philox4x64-10 block for key (1, 2), counter (0, 0, 0, 0): package vs numpy")
    ours = philox4x64((0, 0, 0, 0), (1, 2))
    print([int(v) for v in np.ravel(ours)])
    # numpy increments its counter before each block, so start one below zero
    bg = np.random.Philox(key=np.array([1, 2], dtype=np.uint64), counter=np.array([2**64 - 1, 2**64 - 1, 2**64 - 1, 2**64 - 1], dtype=np.uint64))
    print([int(v) for v in bg.random_raw(4)])


if __name__ == "__main__":
    main()
