#!/usr/bin/env python3
"""Switching density-matrix experiment: the mean of stochastic paths against
the expected equation, for a growing number of paths.

Usage: python scripts/example_breadth.py
"""

import numpy as np

from cogflow.breadth import (
    SwitchingGeneratorSet,
    density_from_states,
    evolve_density_expected,
    evolve_density_stochastic,
    sample_switching_path,
)


def skew(rng, n, scale):
    a = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / 2
    return a - a.conj().T


def main():
    rng = np.random.default_rng(0)
    n, dt, steps = 4, 1e-3, 1000
    gens = SwitchingGeneratorSet(
        np.stack([skew(rng, n, 0.3), skew(rng, n, 0.3)]), skew(rng, n, 0.3), 2.0, [[0.25, 0.75], [0.5, 0.5]]
    )
    rho0 = density_from_states(np.eye(n)[:2]).rho
    phi = sample_switching_path(gens, 0, dt, steps, seed=1, paths=1)[0, :-1]
    ref = evolve_density_expected(rho0, gens, phi, dt, steps, stride=steps)
    print(f"switches on the shared generator path: {np.count_nonzero(np.diff(phi))}")
    print(f"expected equation: trace drift {ref.trace_drift():.1e}, Hermiticity drift {ref.hermiticity_drift():.1e}")
    for M in (1000, 4000, 16000):
        R = evolve_density_stochastic(rho0, gens, phi, dt, steps, seed=1, paths=M, stride=steps).rho[-1]
        dist = np.linalg.norm(R.mean(axis=0) - ref.rho[-1])
        se = np.sqrt(np.sum(np.var(R, axis=0, ddof=1)) / M)
        print(f"M={M:6d}  |mean - expected| = {dist:.2e}   MC standard error {se:.2e}")


if __name__ == "__main__":
    main()
