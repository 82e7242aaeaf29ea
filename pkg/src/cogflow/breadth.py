"""Thread-batch states under Markov-switched linear generators with a
shared scalar Brownian noise, and the density matrices built from them.

Thread SDE (Ito), one scalar Brownian motion for every component::

    dpsi = (A_phi + 1/2 D D) psi dt + D psi dB

Density-matrix SDE and its expectation::

    drho = (A rho + rho A^H - 1/2 D^H D rho - 1/2 rho D^H D + D rho D^H) dt
           + (D rho + rho D^H) dB
    drho_E/dt = A rho_E + rho_E A^H - 1/2 D^H D rho_E - 1/2 rho_E D^H D + D rho_E D^H

``phi`` is a continuous-time Markov chain: each step it renews with
probability ``switch_rate * dt`` and draws its new index from the switch
kernel (a fixed row-stochastic matrix, or a softmax score of ``psi``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import NOISE, SWITCH, RngStreams

__all__ = [
    "BreadthError",
    "SwitchingGeneratorSet",
    "ThreadBatchState",
    "DensityMatrix",
    "ThreadPath",
    "DensityPath",
    "density_from_states",
    "brownian_increments",
    "sample_switching_path",
    "evolve_thread",
    "evolve_density_stochastic",
    "evolve_density_expected",
    "lindblad_rhs",
    "generators_from_dict",
    "load_generators",
    "write_path_csv",
]


class BreadthError(ValueError):
    pass


def _dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True, eq=False)
class SwitchingGeneratorSet:
    generators: np.ndarray  # (m, n, n) complex
    diffusion: np.ndarray  # (n, n) complex, anti-Hermitian
    switch_rate: float
    switch_kernel: np.ndarray | None = None  # (m, m) row-stochastic
    softmax_beta: float = 0.0
    softmax_centers: np.ndarray | None = None  # (m, n) complex

    def __post_init__(self):
        g = np.asarray(self.generators, dtype=np.complex128)
        if g.ndim == 2:
            g = g[None]
        object.__setattr__(self, "generators", g)
        D = np.asarray(self.diffusion, dtype=np.complex128)
        object.__setattr__(self, "diffusion", D)
        m, n, n2 = g.shape
        if n != n2 or D.shape != (n, n):
            raise BreadthError("generators and diffusion must be n x n")
        if np.linalg.norm(D + _dag(D)) > 1e-12 * max(1.0, np.linalg.norm(D)):
            raise BreadthError("diffusion must be anti-Hermitian (D^H = -D)")
        if not self.switch_rate > 0:
            raise BreadthError("switch_rate must be > 0")
        if self.switch_kernel is None:
            if self.softmax_centers is None:
                raise BreadthError("need a switch kernel matrix or softmax centers")
            c = np.asarray(self.softmax_centers, dtype=np.complex128)
            if c.shape != (m, n):
                raise BreadthError(f"softmax centers must have shape ({m}, {n})")
            object.__setattr__(self, "softmax_centers", c)
        else:
            K = np.asarray(self.switch_kernel, dtype=np.float64)
            if K.shape != (m, m):
                raise BreadthError(f"switch kernel must be {m} x {m}")
            if np.any(K < 0) or np.abs(K.sum(axis=1) - 1.0).max() > 1e-12:
                raise BreadthError("switch kernel rows must be nonnegative and sum to 1")
            object.__setattr__(self, "switch_kernel", K)

    @property
    def n(self) -> int:
        return self.generators.shape[1]

    @property
    def m(self) -> int:
        return self.generators.shape[0]

    def switch_probs(self, phi, psi=None) -> np.ndarray:
        """Probabilities of the next generator index, shape ``(M, m)``."""
        phi = np.atleast_1d(phi)
        if self.switch_kernel is not None:
            return self.switch_kernel[phi]
        psi = np.atleast_2d(psi)
        d2 = np.sum(np.abs(psi[:, None, :] - self.softmax_centers[None]) ** 2, axis=-1)
        s = -self.softmax_beta * d2
        s -= s.max(axis=1, keepdims=True)
        w = np.exp(s)
        return w / w.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        def enc(a):
            a = np.asarray(a)
            return np.stack([a.real, a.imag], axis=-1).tolist()

        out = {
            "generators": enc(self.generators),
            "diffusion": enc(self.diffusion),
            "switch_rate": self.switch_rate,
        }
        if self.switch_kernel is not None:
            out["switch_kernel"] = self.switch_kernel.tolist()
        else:
            out["switch_softmax"] = {"beta": self.softmax_beta, "centers": enc(self.softmax_centers)}
        return out


@dataclass(frozen=True, eq=False)
class ThreadBatchState:
    """Zero-padded thread vector of fixed length and the active generator."""

    psi: np.ndarray
    phi: int

    @classmethod
    def padded(cls, threads, n: int, phi: int = 0) -> "ThreadBatchState":
        threads = np.asarray(threads, dtype=np.complex128)
        if len(threads) > n:
            raise BreadthError(f"{len(threads)} active threads exceed capacity {n}")
        psi = np.zeros(n, dtype=np.complex128)
        psi[: len(threads)] = threads
        return cls(psi, int(phi))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.complex128)
        object.__setattr__(self, "rho", rho)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise BreadthError("density matrix must be square")

    @property
    def hermitian_error(self) -> float:
        return float(np.linalg.norm(self.rho - self.rho.conj().T))

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.rho))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T))


def density_from_states(states) -> DensityMatrix:
    """Sum of outer products ``sum_j |psi_j><psi_j|``."""
    states = [np.asarray(s, dtype=np.complex128).ravel() for s in states]
    if not states:
        raise BreadthError("need at least one state")
    n = len(states[0])
    if any(len(s) != n for s in states):
        raise BreadthError("states must have equal length")
    S = np.stack(states)
    rho = S.T @ S.conj()
    # the product is Hermitian up to rounding; make it exact
    return DensityMatrix(0.5 * (rho + rho.conj().T))


@dataclass(frozen=True, eq=False)
class ThreadPath:
    times: np.ndarray  # (K,)
    psi: np.ndarray  # (K, M, n)
    phi: np.ndarray  # (M, steps + 1) full generator path
    dB: np.ndarray  # (M, steps)


@dataclass(frozen=True, eq=False)
class DensityPath:
    times: np.ndarray  # (K,)
    rho: np.ndarray  # (K, M, n, n) or (K, n, n)

    def hermiticity_drift(self) -> float:
        return float(np.linalg.norm(self.rho - _dag(self.rho), axis=(-2, -1)).max())

    def traces(self) -> np.ndarray:
        return np.trace(self.rho, axis1=-2, axis2=-1)

    def trace_drift(self) -> float:
        tr = self.traces()
        return float(np.abs(tr - tr[0]).max())


def _paths(paths, default: int = 1) -> np.ndarray:
    if paths is None:
        return np.arange(default, dtype=np.int64)
    if np.isscalar(paths):
        return np.arange(int(paths), dtype=np.int64)
    return np.asarray(paths, dtype=np.int64)


def brownian_increments(seed: int, paths, steps: int, dt: float) -> np.ndarray:
    """Per-path Brownian increments ``(M, steps)`` from the noise stream."""
    p = _paths(paths)
    rng = RngStreams(seed)
    out = np.empty((len(p), steps))
    for i, j in enumerate(p):
        out[i] = rng.generator(NOISE, j).standard_normal(steps)
    return np.sqrt(dt) * out


def _check_rate(gens: SwitchingGeneratorSet, dt: float) -> None:
    if dt <= 0:
        raise BreadthError("dt must be > 0")
    if gens.switch_rate * dt >= 1.0:
        raise BreadthError(f"switch_rate*dt = {gens.switch_rate * dt:.3g} must be < 1")


def _switch(gens, phi, psi, rng, p, k, dt):
    """Apply the per-step switching rule for step ``k`` to all paths."""
    if gens.m == 1:
        return phi
    u = rng.uniform(SWITCH, p, k, 0)
    go = u < gens.switch_rate * dt
    if not np.any(go):
        return phi
    probs = gens.switch_probs(phi[go], None if psi is None else psi[go])
    cdf = np.cumsum(probs, axis=1)
    v = rng.uniform(SWITCH, p[go], k, 1)
    new = np.minimum((cdf <= v[:, None]).sum(axis=1), gens.m - 1)
    out = phi.copy()
    out[go] = new
    return out



def sample_switching_path(gens: SwitchingGeneratorSet, phi0: int, dt: float, steps: int, seed: int, paths=None) -> np.ndarray:
    """Generator-index paths ``(M, steps + 1)`` for a psi-independent switch kernel."""
    _check_rate(gens, dt)
    if gens.switch_kernel is None:
        raise BreadthError("psi-dependent switching needs the joint simulation in evolve_thread")
    p = _paths(paths)
    rng = RngStreams(seed)
    out = np.empty((len(p), steps + 1), dtype=np.int64)
    out[:, 0] = phi0
    for k in range(steps):
        out[:, k + 1] = _switch(gens, out[:, k], None, rng, p, k, dt)
    return out


def _phi_matrix(phi, n_paths: int, steps: int) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.int64)
    if phi.ndim == 0:
        return np.full((n_paths, steps), int(phi))
    if phi.ndim == 1:
        return np.broadcast_to(phi[:steps], (n_paths, steps))
    return phi[:, :steps]


def evolve_thread(
    state: ThreadBatchState,
    gens: SwitchingGeneratorSet,
    dt: float,
    steps: int,
    seed: int = 0,
    paths=None,
    dB=None,
    stride: int = 1,
) -> ThreadPath:
    """Euler-Maruyama paths of the thread SDE with Markov switching.

    ``paths`` selects which per-path random streams to use (an int ``M``
    means paths ``0..M-1``). Passing ``dB`` of shape ``(M, steps)``
    overrides the Brownian increments. States are stored every ``stride``
    steps; the generator path and increments are always returned in full.
    """
    _check_rate(gens, dt)
    p = _paths(paths, 1 if dB is None else np.shape(dB)[0])
    M = len(p)
    if dB is None:
        dB = brownian_increments(seed, p, steps, dt)
    dB = np.asarray(dB, dtype=np.float64).reshape(M, steps)
    rng = RngStreams(seed)
    A = gens.generators
    D = gens.diffusion
    DD = D @ D
    psi = np.tile(np.asarray(state.psi, dtype=np.complex128), (M, 1))
    phi = np.full(M, int(state.phi), dtype=np.int64)
    phi_path = np.empty((M, steps + 1), dtype=np.int64)
    phi_path[:, 0] = phi
    times, saved = [0.0], [psi.copy()]
    for k in range(steps):
        drift = np.einsum("mij,mj->mi", A[phi], psi) + 0.5 * psi @ DD.T
        noise = psi @ D.T
        new_psi = psi + drift * dt + noise * dB[:, k : k + 1]
        phi = _switch(gens, phi, psi, rng, p, k, dt)
        psi = new_psi
        phi_path[:, k + 1] = phi
        if (k + 1) % stride == 0 or k + 1 == steps:
            times.append((k + 1) * dt)
            saved.append(psi.copy())
    return ThreadPath(np.array(times), np.stack(saved), phi_path, dB)


def lindblad_rhs(A, D, rho):
    """Drift ``A rho + rho A^H - 1/2 D^H D rho - 1/2 rho D^H D + D rho D^H``.

    Written as ``X + X^H + D rho D^H`` with ``X = (A - 1/2 D^H D) rho`` so
    the Hermitian structure survives rounding.
    """
    G = A - 0.5 * _dag(D) @ D
    X = G @ rho
    return X + _dag(X) + D @ rho @ _dag(D)


def _coords(rho) -> np.ndarray:
    """Real coordinates of Hermitian matrices: diagonal, then upper-triangle
    real parts, then upper-triangle imaginary parts (``n*n`` reals)."""
    rho = np.asarray(rho)
    n = rho.shape[-1]
    iu = np.triu_indices(n, 1)
    diag = np.diagonal(rho, axis1=-2, axis2=-1).real
    up = rho[..., iu[0], iu[1]]
    return np.concatenate([diag, up.real, up.imag], axis=-1)


def _from_coords(h, n: int) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    iu = np.triu_indices(n, 1)
    k = len(iu[0])
    rho = np.zeros(h.shape[:-1] + (n, n), dtype=np.complex128)
    idx = np.arange(n)
    rho[..., idx, idx] = h[..., :n]
    up = h[..., n : n + k] + 1j * h[..., n + k :]
    rho[..., iu[0], iu[1]] = up
    rho[..., iu[1], iu[0]] = np.conj(up)
    return rho


def _real_superop(f, n: int) -> np.ndarray:
    """Matrix of a linear Hermitian-preserving map ``f`` in real coordinates."""
    basis = _from_coords(np.eye(n * n), n)
    return np.stack([_coords(f(b)) for b in basis], axis=1)


def evolve_density_stochastic(
    rho0,
    gens: SwitchingGeneratorSet,
    phi_path,
    dt: float,
    steps: int,
    seed: int = 0,
    paths=None,
    dB=None,
    stride: int = 1,
) -> DensityPath:
    """Euler-Maruyama on the density-matrix SDE.

    ``phi_path`` is an int (fixed generator), a per-step index array
    ``(steps,)`` shared by all paths, or ``(M, steps)``. Increments come
    from the per-path noise streams unless ``dB`` is given.

    The state is carried in real Hermitian coordinates, where drift and
    noise are fixed real ``n^2 x n^2`` maps; one step is a single matrix
    product for all paths and the iterates are Hermitian by construction.
    """
    _check_rate(gens, dt)
    rho0 = np.asarray(rho0, dtype=np.complex128)
    n = gens.n
    if rho0.shape[-2:] != (n, n):
        raise BreadthError(f"rho0 must be {n} x {n}")
    p = _paths(paths, 1 if dB is None else np.shape(dB)[0])
    M = len(p)
    if dB is None:
        dB = brownian_increments(seed, p, steps, dt)
    dB = np.asarray(dB, dtype=np.float64).reshape(M, steps)
    phis = _phi_matrix(phi_path, M, steps)
    D = gens.diffusion
    n2 = n * n
    noise = _real_superop(lambda r: D @ r + r @ _dag(D), n)
    # per generator: [I + dt L ; N] acting on column vectors, paths along columns
    step_maps = [
        np.vstack([np.eye(n2) + dt * _real_superop(lambda r, A=A: lindblad_rhs(A, D, r), n), noise])
        for A in gens.generators
    ]
    dBt = np.ascontiguousarray(dB.T)
    h = np.repeat(_coords(rho0)[:, None], M, axis=1)
    times, saved = [0.0], [_from_coords(h.T, n)]
    Q = np.empty((2 * n2, M))
    tmp = np.empty((n2, M))
    for k in range(steps):
        col = phis[:, k]
        if np.all(col == col[0]):
            np.matmul(step_maps[col[0]], h, out=Q)
        else:
            for g in np.unique(col):
                sel = col == g
                Q[:, sel] = step_maps[g] @ h[:, sel]
        np.multiply(Q[n2:], dBt[k], out=tmp)
        np.add(Q[:n2], tmp, out=h)
        if (k + 1) % stride == 0 or k + 1 == steps:
            times.append((k + 1) * dt)
            saved.append(_from_coords(h.T, n))
    return DensityPath(np.array(times), np.stack(saved))


def evolve_density_expected(
    rho0,
    gens: SwitchingGeneratorSet,
    phi_schedule,
    dt: float,
    steps: int,
    stride: int = 1,
) -> DensityPath:
    """Classical RK4 on the expected (Lindblad-like) equation.

    ``phi_schedule`` is an int or a per-step index array; the generator is
    held fixed within each step.
    """
    if dt <= 0:
        raise BreadthError("dt must be > 0")
    rho = np.asarray(rho0, dtype=np.complex128).copy()
    n = gens.n
    if rho.shape != (n, n):
        raise BreadthError(f"rho0 must be {n} x {n}")
    phis = _phi_matrix(phi_schedule, 1, steps)[0]
    D = gens.diffusion
    times, saved = [0.0], [rho.copy()]
    for k in range(steps):
        A = gens.generators[phis[k]]
        k1 = lindblad_rhs(A, D, rho)
        k2 = lindblad_rhs(A, D, rho + 0.5 * dt * k1)
        k3 = lindblad_rhs(A, D, rho + 0.5 * dt * k2)
        k4 = lindblad_rhs(A, D, rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (k + 1) % stride == 0 or k + 1 == steps:
            times.append((k + 1) * dt)
            saved.append(rho.copy())
    return DensityPath(np.array(times), np.stack(saved))


# -- IO ---------------------------------------------------------------------------


def _complex(a, where: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise BreadthError(f"{where}: complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def generators_from_dict(d: dict) -> SwitchingGeneratorSet:
    allowed = {"generators", "diffusion", "switch_rate", "switch_kernel", "switch_softmax"}
    extra = set(d) - allowed
    if extra:
        raise BreadthError(f"unknown keys in generator set: {sorted(extra)}")
    try:
        soft = d.get("switch_softmax")
        return SwitchingGeneratorSet(
            generators=_complex(d["generators"], "generators"),
            diffusion=_complex(d["diffusion"], "diffusion"),
            switch_rate=float(d["switch_rate"]),
            switch_kernel=d.get("switch_kernel"),
            softmax_beta=float(soft["beta"]) if soft else 0.0,
            softmax_centers=_complex(soft["centers"], "centers") if soft else None,
        )
    except KeyError as exc:
        raise BreadthError(f"missing key {exc} in generator set") from exc


def load_generators(path) -> SwitchingGeneratorSet:
    return generators_from_dict(json.loads(Path(path).read_text()))


def write_path_csv(path: DensityPath, file, which: int = 0) -> None:
    """One row per output time: ``t, re_ij, im_ij`` for every entry (row-major)."""
    rho = path.rho
    if rho.ndim == 4:
        rho = rho[:, which]
    n = rho.shape[-1]
    head = ["t"]
    for i in range(n):
        for j in range(n):
            head += [f"re_{i}{j}", f"im_{i}{j}"]
    with open(file, "w") as fh:
        fh.write(",".join(head) + "\n")
        for t, r in zip(path.times, rho):
            flat = r.ravel()
            vals = np.empty(2 * len(flat))
            vals[0::2] = flat.real
            vals[1::2] = flat.imag
            fh.write(",".join([f"{t:.17g}"] + [f"{v:.17g}" for v in vals]) + "\n")
