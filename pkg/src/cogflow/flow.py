"""Fixed-step RK4 flows under a frozen cognitive state.

The vectorized core :func:`advance` integrates many points at once, each
for its own duration. Every point takes ``floor(duration / step)`` full
steps followed by one shortened step, so the end time is hit exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DomainError, ModelSpec

__all__ = [
    "Trajectory",
    "ReverseMeasureRatio",
    "advance",
    "rk4_step",
    "apply_domain_policy",
    "flow_forward",
    "flow_reverse",
    "reverse_measure_ratio",
    "reverse_points",
    "box_volume_ratio",
]

# Partial steps shorter than this fraction of ``step`` are dropped; they only
# arise from rounding in ``duration / step``.
_PARTIAL_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    points: np.ndarray  # (len(times), d)
    cognitive: int

    def __post_init__(self):
        if len(self.times) != len(self.points):
            raise ValueError("times and points differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


@dataclass(frozen=True, eq=False)
class ReverseMeasureRatio:
    ratio: float
    tau: float
    base_point: np.ndarray
    cognitive: int


def _step_plan(durations, step):
    durations = np.asarray(durations, dtype=np.float64)
    if np.any(durations < 0):
        raise ValueError("durations must be >= 0")
    if step <= 0:
        raise ValueError("step must be > 0")
    n_full = np.floor(durations / step)
    partial = durations - n_full * step
    partial = np.where(partial < _PARTIAL_EPS * step, 0.0, partial)
    return n_full.astype(np.int64), partial


def apply_domain_policy(spec: ModelSpec, x, on_exit: str):
    """Apply the domain policy after a step. Returns (x, exited mask)."""
    if spec.periodic:
        return spec.wrap(x), np.zeros(len(x), dtype=bool)
    out = ~spec.inside(x)
    if not np.any(out):
        return x, out
    if on_exit == "flag":
        return x, out
    if spec.strict:
        bad = x[np.flatnonzero(out)[0]]
        raise DomainError(
            f"trajectory left the domain at {bad.tolist()} (domain {spec.domain.tolist()})"
        )
    return np.clip(x, spec.lo, spec.hi), np.zeros(len(x), dtype=bool)


def rk4_step(spec: ModelSpec, x, y, h, sign: float = 1.0, track_logj: bool = False):
    """One classical RK4 step of ``sign * v`` with per-point step sizes ``h``.

    Returns the new points (no domain policy applied) and, if requested, the
    matching increment of the Liouville log-Jacobian.
    """
    hc = np.asarray(h, dtype=np.float64)[:, None]
    k1 = sign * spec.raw_velocity(x, y)
    p2 = x + 0.5 * hc * k1
    k2 = sign * spec.raw_velocity(p2, y)
    p3 = x + 0.5 * hc * k2
    k3 = sign * spec.raw_velocity(p3, y)
    p4 = x + hc * k3
    k4 = sign * spec.raw_velocity(p4, y)
    xn = x + hc / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not track_logj:
        return xn, None
    d = [spec.divergence(p, y) for p in (x, p2, p3, p4)]
    return xn, sign * hc[:, 0] / 6.0 * (d[0] + 2.0 * d[1] + 2.0 * d[2] + d[3])


def advance(
    spec: ModelSpec,
    x,
    y,
    durations,
    step: float,
    sign: float = 1.0,
    track_logj: bool = False,
    on_exit: str = "policy",
):
    """Integrate ``dx/du = sign * v(x, y)`` for per-point durations.

    Parameters
    ----------
    x : array_like, shape (N, d)
    y : array_like of int, shape (N,)
    durations : array_like, shape (N,) or scalar
    sign : +1 for the forward flow, -1 for the time-reversed flow.
    track_logj : also integrate ``d log J / du = sign * div v`` (Liouville).
    on_exit : ``"policy"`` applies the model's domain policy, ``"flag"``
        freezes exiting points and reports them instead of raising.

    Returns
    -------
    x_end : ndarray (N, d)
    logj : ndarray (N,) or None
    exited : ndarray of bool (N,)
    """
    x = np.array(x, dtype=np.float64, ndmin=2)
    n = len(x)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    durations = np.broadcast_to(np.asarray(durations, dtype=np.float64), (n,))
    n_full, partial = _step_plan(durations, step)
    logj = np.zeros(n) if track_logj else None
    exited = np.zeros(n, dtype=bool)
    n_iter = int(n_full.max() + 1) if n else 0

    for k in range(n_iter):
        h = np.where(k < n_full, step, np.where(k == n_full, partial, 0.0))
        h[exited] = 0.0
        idx = np.flatnonzero(h > 0)
        if idx.size == 0:
            continue
        xn, dlogj = rk4_step(spec, x[idx], y[idx], h[idx], sign, track_logj)
        if track_logj:
            logj[idx] += dlogj
        xn, out = apply_domain_policy(spec, xn, on_exit)
        x[idx] = np.where(out[:, None], x[idx], xn)
        exited[idx[out]] = True
    return x, logj, exited


def _point(spec: ModelSpec, x):
    x = np.asarray(x, dtype=np.float64).reshape(spec.dim)
    return spec.admit(x[None, :])[0]


def flow_forward(spec: ModelSpec, x0, y: int, duration: float, step: float, t0: float = 0.0) -> Trajectory:
    """Forward trajectory of ``dx/dt = v(x, y)`` from ``x0`` over ``duration``.

    The final time is exactly ``t0 + duration``; the last step is shortened.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    x = _point(spec, x0)
    (n_full,), (partial,) = _step_plan([duration], step)
    hs = [step] * int(n_full) + ([partial] if partial > 0 else [])
    times = [t0]
    points = [x.copy()]
    cur = x[None, :]
    for i, h in enumerate(hs):
        cur, _, _ = advance(spec, cur, [y], [h], h)
        times.append(t0 + duration if i == len(hs) - 1 else t0 + (i + 1) * step)
        points.append(cur[0].copy())
    return Trajectory(np.array(times), np.array(points), int(y))


def flow_reverse(spec: ModelSpec, x, y: int, s: float, step: float) -> np.ndarray:
    """Time-reversed point: integrate ``dw/du = -v(w, y)`` from ``x`` for time ``s``."""
    if s < 0:
        raise ValueError("s must be >= 0")
    w, _, _ = advance(spec, _point(spec, x)[None, :], [y], [s], step, sign=-1.0)
    return w[0]


def reverse_points(spec: ModelSpec, x, y, s, step: float, on_exit: str = "policy"):
    """Vectorized reverse flow with the Liouville log-Jacobian.

    Returns ``(w, ratio, exited)`` where ``ratio = exp(-int_0^s div v(w(u), y) du)``.
    """
    w, logj, exited = advance(spec, x, y, s, step, sign=-1.0, track_logj=True, on_exit=on_exit)
    return w, np.exp(logj), exited


def reverse_measure_ratio(spec: ModelSpec, x, y: int, tau: float, step: float) -> ReverseMeasureRatio:
    """Volume ratio of a vanishing ball carried back by the reverse flow."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    base = _point(spec, x)
    _, ratio, _ = reverse_points(spec, base[None, :], [y], [tau], step)
    return ReverseMeasureRatio(float(ratio[0]), float(tau), base, int(y))


def box_volume_ratio(spec: ModelSpec, x, y: int, tau: float, step: float, eps: float = 1e-3) -> float:
    """Finite-box estimate of the same ratio: map the corners of a small box
    through the reverse flow and take the parallelepiped volume spanned by
    the images of the edges at the base corner."""
    base = _point(spec, x)
    corners = np.vstack([base, base + eps * np.eye(spec.dim)])
    w, _, _ = advance(spec, corners, [y] * len(corners), [tau] * len(corners), step, sign=-1.0)
    edges = (w[1:] - w[0]).T
    return float(abs(np.linalg.det(edges)) / eps**spec.dim)
