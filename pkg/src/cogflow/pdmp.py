"""Monte Carlo simulation of the thought/cognition jump process.

Particles follow the RK4 flow of ``v(., y)`` between renewal epochs of a
rate-``rate`` exponential clock; at each epoch ``y`` is redrawn from
``psi(x, .)`` and the elapsed time ``tau`` restarts. Jump epochs come from
the time stream and jump targets from the space stream, so changing the
kernel never moves an epoch and changing the rate never changes a target
draw.

Elapsed time is kept as the time of the last renewal, ``t_last``, so that
``tau = t - t_last`` is exactly ``t - t_start`` for never-jumped particles.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context
from typing import Callable

import numpy as np

from .flow import apply_domain_policy, rk4_step
from .model import ModelSpec
from .rng import INIT, SPACE, TIME, RngStreams

__all__ = [
    "ParticleState",
    "JumpLog",
    "EnsembleSnapshot",
    "sample_initial",
    "sample_transition",
    "simulate_continuous",
    "step_discrete",
    "simulate_discrete",
    "atom_weight",
    "simulate_ensemble",
    "write_snapshot_csv",
    "write_jump_log_csv",
    "DEFAULT_CHUNK",
]

# Fixed so that results never depend on the worker count.
DEFAULT_CHUNK = 1 << 16


@dataclass(frozen=True)
class ParticleState:
    x: np.ndarray
    y: int
    tau: float
    t: float


@dataclass(frozen=True, eq=False)
class JumpLog:
    particle: np.ndarray
    time: np.ndarray
    from_y: np.ndarray
    to_y: np.ndarray
    x: np.ndarray  # (K, d)

    def __len__(self):
        return len(self.time)

    @classmethod
    def empty(cls, dim: int) -> "JumpLog":
        return cls(
            np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, dim))
        )

    @classmethod
    def concat(cls, logs, dim: int) -> "JumpLog":
        logs = [lg for lg in logs if len(lg)]
        if not logs:
            return cls.empty(dim)
        return cls(*(np.concatenate([getattr(lg, f) for lg in logs]) for f in ("particle", "time", "from_y", "to_y", "x")))

    def sorted(self) -> "JumpLog":
        order = np.lexsort((self.time, self.particle))
        return JumpLog(self.particle[order], self.time[order], self.from_y[order], self.to_y[order], self.x[order])


@dataclass(frozen=True, eq=False)
class EnsembleSnapshot:
    """Immutable ensemble state at a common time ``t``.

    ``index`` holds global particle ids; they address the random streams,
    so any subset of particles evolves exactly as it would in the full run.
    """

    t: float
    t_start: float
    x: np.ndarray  # (N, d)
    y: np.ndarray  # (N,)
    t_last: np.ndarray  # (N,) time of last renewal
    next_epoch: np.ndarray  # (N,) next renewal time
    time_count: np.ndarray  # (N,) draws consumed from the time stream
    space_count: np.ndarray  # (N,) draws consumed from the space stream
    index: np.ndarray  # (N,) global particle ids
    seed: int
    model_hash: str
    mode: str

    def __len__(self):
        return len(self.y)

    @property
    def tau(self) -> np.ndarray:
        return self.t - self.t_last

    def particle(self, i: int) -> ParticleState:
        return ParticleState(self.x[i].copy(), int(self.y[i]), float(self.t - self.t_last[i]), self.t)

    def take(self, sel) -> "EnsembleSnapshot":
        return replace(
            self,
            **{f: getattr(self, f)[sel] for f in _ARRAY_FIELDS},
        )

    @classmethod
    def concat(cls, parts) -> "EnsembleSnapshot":
        parts = list(parts)
        first = parts[0]
        return replace(first, **{f: np.concatenate([getattr(p, f) for p in parts]) for f in _ARRAY_FIELDS})


_ARRAY_FIELDS = ("x", "y", "t_last", "next_epoch", "time_count", "space_count", "index")


def _targets(spec: ModelSpec, x, u):
    """Inverse-CDF draw over the finite kernel vector at points ``x``."""
    cdf = np.cumsum(spec.raw_kernel(x), axis=1)
    y = np.sum(cdf <= u[:, None], axis=1)
    return np.minimum(y, spec.n_cognitive - 1)


def sample_transition(spec: ModelSpec, x, rng: RngStreams, particle: int = 0, counter: int = 0) -> int:
    """Draw ``y*`` from ``psi(x, .)`` using space-stream draw ``counter`` of ``particle``."""
    x = spec.admit(np.asarray(x, dtype=np.float64).reshape(1, spec.dim))
    u = np.atleast_1d(rng.uniform(SPACE, particle, counter))
    return int(_targets(spec, x, u)[0])


def _initial_positions(spec: ModelSpec, idx, rng: RngStreams):
    n, d = len(idx), spec.dim
    ini = spec.initial
    if ini.family == "point":
        return np.tile(ini.point, (n, 1))
    if ini.family == "uniform-box":
        u = np.stack([rng.uniform(INIT, idx, 0, lane) for lane in range(d)], axis=1)
        return spec.lo + u * (spec.hi - spec.lo)
    # truncated gaussian by rejection; attempt a uses counter a
    x = np.empty((n, d))
    todo = np.arange(n)
    attempt = 0
    while todo.size:
        z = np.stack([rng.normal(INIT, idx[todo], attempt, lane) for lane in range(d)], axis=1)
        cand = ini.mean + ini.std * z
        ok = spec.inside(cand)
        x[todo[ok]] = cand[ok]
        todo = todo[~ok]
        attempt += 1
        if attempt > 10_000:
            raise RuntimeError("gaussian initial density has negligible mass in the domain")
    return x


def sample_initial(
    spec: ModelSpec,
    n: int,
    rng: RngStreams,
    t0: float = 0.0,
    indices=None,
) -> EnsembleSnapshot:
    """Draw an initial ensemble.

    Every particle takes its initial jump at ``t0``: ``y ~ psi(x, .)``. In
    jump-at-zero mode ``tau = 0``; in stationary-approximation mode the last
    renewal is placed an ``Exp(rate)`` backward-recurrence time before
    ``t0``. The first forward epoch is ``t0 + Exp(rate)`` in both modes.
    """
    idx = np.arange(n, dtype=np.int64) if indices is None else np.asarray(indices, dtype=np.int64)
    if len(idx) < 1:
        raise ValueError("need at least one particle")
    x = _initial_positions(spec, idx, rng)
    y = _targets(spec, x, rng.uniform(SPACE, idx, 0))
    space_count = np.ones(len(idx), dtype=np.int64)
    if spec.time_origin == "jump-at-zero":
        t_last = np.full(len(idx), float(t0))
        next_epoch = t0 + rng.exponential(TIME, spec.rate, idx, 0)
        time_count = np.ones(len(idx), dtype=np.int64)
    else:
        t_last = t0 - rng.exponential(TIME, spec.rate, idx, 0)
        next_epoch = t0 + rng.exponential(TIME, spec.rate, idx, 1)
        time_count = np.full(len(idx), 2, dtype=np.int64)
    return EnsembleSnapshot(
        t=float(t0),
        t_start=float(t0),
        x=x,
        y=y.astype(np.int64),
        t_last=t_last,
        next_epoch=next_epoch,
        time_count=time_count,
        space_count=space_count,
        index=idx,
        seed=int(rng.seed),
        model_hash=spec.digest(),
        mode=spec.time_origin,
    )


def _check_model(spec: ModelSpec, snap: EnsembleSnapshot) -> None:
    if snap.model_hash != spec.digest():
        raise ValueError("snapshot was produced by a different model")


def _advance_interval(spec, rng, state, a, b, step, log):
    """Move every particle from time ``a`` to ``b``, handling renewals exactly."""
    x, y, t_last, nxt, tc, sc, idx = state
    n = len(y)
    seg_start = np.full(n, a)
    k = np.zeros(n, dtype=np.int64)
    cur = np.full(n, a)
    act = np.arange(n)
    while act.size:
        due = act[nxt[act] <= np.minimum(cur[act], b)]
        if due.size:
            at = nxt[due]
            u = rng.uniform(SPACE, idx[due], sc[due])
            new_y = _targets(spec, x[due], u)
            if log is not None:
                log.append((idx[due], at.copy(), y[due].copy(), new_y, x[due].copy()))
            y[due] = new_y
            sc[due] += 1
            t_last[due] = at
            nxt[due] = at + rng.exponential(TIME, spec.rate, idx[due], tc[due])
            tc[due] += 1
            seg_start[due] = at
            k[due] = 0
        target = np.minimum(nxt[act], b)
        act = act[target > cur[act]]
        if not act.size:
            break
        target = np.minimum(nxt[act], b)
        full = seg_start[act] + (k[act] + 1) * step
        last = full >= target
        new_t = np.where(last, target, full)
        h = new_t - cur[act]
        xn, _ = rk4_step(spec, x[act], y[act], h)
        xn, _ = apply_domain_policy(spec, xn, "policy")
        x[act] = xn
        cur[act] = new_t
        k[act] += 1


def simulate_continuous(
    spec: ModelSpec,
    snapshot: EnsembleSnapshot,
    horizon: float,
    step: float,
    record_times=None,
    recorder: Callable | None = None,
    record_jumps: bool = True,
):
    """Run the continuous-time model for ``horizon`` time units.

    Renewal epochs are sampled exactly (no time discretization); the flow
    between epochs uses fixed RK4 steps restarted at each epoch and at each
    record time. ``recorder(snapshot)`` is called at every time in
    ``record_times`` that lies in ``[t, t + horizon]``.

    Returns
    -------
    EnsembleSnapshot, JumpLog
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    if step <= 0:
        raise ValueError("step must be > 0")
    _check_model(spec, snapshot)
    t0 = snapshot.t
    t_end = t0 + horizon
    rng = RngStreams(snapshot.seed)
    stops = sorted({float(s) for s in (record_times or ()) if t0 < s < t_end} | {t_end})
    state = (
        snapshot.x.copy(),
        snapshot.y.copy(),
        snapshot.t_last.copy(),
        snapshot.next_epoch.copy(),
        snapshot.time_count.copy(),
        snapshot.space_count.copy(),
        snapshot.index,
    )
    log = [] if record_jumps else None
    wanted = {float(s) for s in (record_times or ())}

    def snap_at(t):
        x, y, t_last, nxt, tc, sc, idx = state
        return replace(
            snapshot,
            t=t,
            x=x.copy(),
            y=y.copy(),
            t_last=t_last.copy(),
            next_epoch=nxt.copy(),
            time_count=tc.copy(),
            space_count=sc.copy(),
        )

    if recorder is not None and t0 in wanted:
        recorder(snapshot)
    a = t0
    for b in stops:
        _advance_interval(spec, rng, state, a, b, step, log)
        a = b
        if recorder is not None and b in wanted:
            recorder(snap_at(b))
    final = snap_at(t_end)
    if log is None:
        jumps = JumpLog.empty(spec.dim)
    else:
        jumps = JumpLog.concat(
            [JumpLog(p, t, f, to, xx) for p, t, f, to, xx in log], spec.dim
        ).sorted()
    return final, jumps


def step_discrete(spec: ModelSpec, snapshot: EnsembleSnapshot, dt: float) -> EnsembleSnapshot:
    """One step of the discrete-time model.

    ``x <- x + v(x, y) dt``; with probability ``rate * dt`` the particle
    renews and redraws ``y ~ psi(x, .)`` at the pre-step position.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if spec.rate * dt >= 1.0:
        raise ValueError(
            f"rate*dt = {spec.rate * dt:.3g} >= 1: a per-step jump probability of rate*dt "
            "is only a valid Bernoulli approximation when rate*dt < 1"
        )
    _check_model(spec, snapshot)
    rng = RngStreams(snapshot.seed)
    idx = snapshot.index
    x = snapshot.x
    y = snapshot.y.copy()
    tc = snapshot.time_count.copy()
    sc = snapshot.space_count.copy()
    t_new = snapshot.t + dt
    t_last = snapshot.t_last.copy()

    jump = rng.uniform(TIME, idx, tc) < spec.rate * dt
    tc += 1
    if np.any(jump):
        j = np.flatnonzero(jump)
        y[j] = _targets(spec, x[j], rng.uniform(SPACE, idx[j], sc[j]))
        sc[j] += 1
        t_last[j] = t_new
    xn = x + spec.raw_velocity(x, snapshot.y) * dt
    xn, _ = apply_domain_policy(spec, xn, "policy")
    return replace(snapshot, t=t_new, x=xn, y=y, t_last=t_last, time_count=tc, space_count=sc)


def simulate_discrete(spec: ModelSpec, snapshot: EnsembleSnapshot, dt: float, n_steps: int) -> EnsembleSnapshot:
    for _ in range(n_steps):
        snapshot = step_discrete(spec, snapshot, dt)
    return snapshot


def atom_weight(snapshot: EnsembleSnapshot, t: float | None = None) -> float:
    """Fraction of particles that never renewed since ``t_start``."""
    if snapshot.mode != "jump-at-zero":
        raise ValueError("the elapsed-time atom only exists in jump-at-zero mode")
    if t is not None and t != snapshot.t:
        raise ValueError(f"snapshot is at t={snapshot.t}, not {t}")
    return float(np.mean(snapshot.t_last == snapshot.t_start))


# -- chunked ensemble driver ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    final: EnsembleSnapshot
    jumps: JumpLog
    records: dict  # time -> summed recorder output


def _run_chunk(args):
    spec, seed, lo, hi, horizon, step, record_times, record_fn, record_jumps, t0 = args
    snap = sample_initial(spec, hi - lo, RngStreams(seed), t0=t0, indices=np.arange(lo, hi))
    records = {}

    def rec(s):
        records[s.t] = record_fn(s)

    final, jumps = simulate_continuous(
        spec,
        snap,
        horizon,
        step,
        record_times=record_times,
        recorder=rec if record_fn is not None else None,
        record_jumps=record_jumps,
    )
    return final, jumps, records


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("COGFLOW_WORKERS", "1"))
    return max(1, int(workers))


def simulate_ensemble(
    spec: ModelSpec,
    n: int,
    seed: int,
    horizon: float,
    step: float,
    record_times=None,
    record_fn: Callable | None = None,
    record_jumps: bool = True,
    workers: int | None = None,
    chunk_size: int = DEFAULT_CHUNK,
    t0: float = 0.0,
) -> EnsembleResult:
    """Sample and simulate ``n`` particles in fixed-size chunks.

    Chunks are formed independently of ``workers``; recorder outputs are
    summed and logs concatenated in particle order, so the result is
    identical for any worker count. ``record_fn`` must be picklable when
    ``workers > 1``.
    """
    if n < 1:
        raise ValueError("need at least one particle")
    workers = resolve_workers(workers)
    bounds = [(lo, min(lo + chunk_size, n)) for lo in range(0, n, chunk_size)]
    tasks = [
        (spec, seed, lo, hi, horizon, step, record_times, record_fn, record_jumps, t0) for lo, hi in bounds
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork")) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    final = EnsembleSnapshot.concat([p[0] for p in parts])
    jumps = JumpLog.concat([p[1] for p in parts], spec.dim)
    records = {}
    for _, _, rec in parts:
        for t, val in rec.items():
            records[t] = val if t not in records else records[t] + val
    return EnsembleResult(final, jumps, dict(sorted(records.items())))


# -- CSV dumps -------------------------------------------------------------------


def _fmt(a) -> np.ndarray:
    return np.char.mod("%.17g", np.asarray(a, dtype=np.float64))


def write_snapshot_csv(snapshot: EnsembleSnapshot, path) -> None:
    """``particle,t,x0..x{d-1},y,tau`` with 17 significant digits."""
    d = snapshot.x.shape[1]
    cols = [snapshot.index.astype(str), _fmt(np.full(len(snapshot), snapshot.t))]
    cols += [_fmt(snapshot.x[:, i]) for i in range(d)]
    cols += [snapshot.y.astype(str), _fmt(snapshot.tau)]
    header = ",".join(["particle", "t"] + [f"x{i}" for i in range(d)] + ["y", "tau"])
    _write_rows(path, header, cols)


def write_jump_log_csv(log: JumpLog, path) -> None:
    """``particle,time,from_y,to_y,x0..x{d-1}`` sorted by (particle, time)."""
    log = log.sorted()
    d = log.x.shape[1]
    cols = [log.particle.astype(str), _fmt(log.time), log.from_y.astype(str), log.to_y.astype(str)]
    cols += [_fmt(log.x[:, i]) for i in range(d)]
    header = ",".join(["particle", "time", "from_y", "to_y"] + [f"x{i}" for i in range(d)])
    _write_rows(path, header, cols)


def _write_rows(path, header, cols) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        if len(cols[0]):
            rows = cols[0].astype(object)
            for c in cols[1:]:
                rows = rows + "," + c.astype(object)
            fh.write("\n".join(rows) + "\n")
