"""Declarative model: thought domain, cognitive states, velocity field,
transition kernel, renewal rate and initial density.

All evaluation functions are vectorized: points are ``(N, d)`` arrays and
cognitive indices ``(N,)`` integer arrays. Single points are accepted and
returned in their own shape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

__all__ = [
    "ModelError",
    "DomainError",
    "Damping",
    "VelocityFieldSpec",
    "TransitionKernelSpec",
    "InitialDensitySpec",
    "ModelSpec",
    "ValidationReport",
    "validate_model",
    "eval_velocity",
    "eval_kernel",
    "model_from_dict",
    "load_model",
    "kernel_lipschitz",
]

VELOCITY_FAMILIES = ("constant-per-y", "linear-per-y", "gaussian-bump-mixture")
KERNEL_FAMILIES = ("uniform", "point-mass", "softmax-score", "fixed-weights")
INITIAL_FAMILIES = ("uniform-box", "gaussian", "point")
TIME_ORIGINS = ("jump-at-zero", "stationary-approximation")


class ModelError(ValueError):
    """Structurally invalid model specification."""


class DomainError(RuntimeError):
    """A point left the thought domain while strict mode is on."""


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


@dataclass(frozen=True)
class Damping:
    """Boundary damping: the field is exactly zero within ``margin`` of the
    box boundary and ramps to full strength over the next ``ramp`` (C2
    quintic ramp)."""

    enabled: bool = True
    margin: float = 0.05
    ramp: float = 0.25


@dataclass(frozen=True, eq=False)
class VelocityFieldSpec:
    family: str
    constants: np.ndarray | None = None  # (m, d)
    matrices: np.ndarray | None = None  # (m, d, d)
    # flattened bump list; owner[k] is the cognitive index bump k belongs to
    bump_owner: np.ndarray | None = None  # (K,)
    bump_center: np.ndarray | None = None  # (K, d)
    bump_width: np.ndarray | None = None  # (K,)
    bump_amplitude: np.ndarray | None = None  # (K, d)
    damping: Damping = field(default_factory=Damping)

    def to_dict(self, n_cognitive: int | None = None) -> dict:
        out = {"family": self.family}
        if self.family == "constant-per-y":
            out["constants"] = self.constants.tolist()
        elif self.family == "linear-per-y":
            out["matrices"] = self.matrices.tolist()
        else:
            m = n_cognitive if n_cognitive is not None else int(self.bump_owner.max()) + 1
            bumps = [[] for _ in range(m)]
            for k, y in enumerate(self.bump_owner):
                bumps[int(y)].append(
                    {
                        "center": self.bump_center[k].tolist(),
                        "width": float(self.bump_width[k]),
                        "amplitude": self.bump_amplitude[k].tolist(),
                    }
                )
            out["bumps"] = bumps
        out["damping"] = {
            "enabled": self.damping.enabled,
            "margin": self.damping.margin,
            "ramp": self.damping.ramp,
        }
        return out


@dataclass(frozen=True, eq=False)
class TransitionKernelSpec:
    family: str
    target: int | None = None  # point-mass
    centers: np.ndarray | None = None  # softmax-score, (m, d)
    beta: float = 0.0
    weights: np.ndarray | None = None  # fixed-weights, (m,)

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        if self.family == "point-mass":
            out["target"] = self.target
        elif self.family == "softmax-score":
            out["centers"] = self.centers.tolist()
            out["beta"] = self.beta
        elif self.family == "fixed-weights":
            out["weights"] = self.weights.tolist()
        return out


@dataclass(frozen=True, eq=False)
class InitialDensitySpec:
    """Initial thought density. ``gaussian`` is truncated to the domain box."""

    family: str
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    point: np.ndarray | None = None

    def to_dict(self) -> dict:
        out: dict = {"family": self.family}
        if self.family == "gaussian":
            out["mean"] = self.mean.tolist()
            out["std"] = self.std.tolist()
        elif self.family == "point":
            out["point"] = self.point.tolist()
        return out


@dataclass(frozen=True, eq=False)
class ModelSpec:
    dim: int
    domain: np.ndarray  # (d, 2) rows of [lo, hi]
    n_cognitive: int
    velocity: VelocityFieldSpec
    kernel: TransitionKernelSpec
    rate: float
    initial: InitialDensitySpec
    time_origin: str = "jump-at-zero"
    periodic: bool = False
    strict: bool = True
    h_div: float = 1e-5

    def __post_init__(self):
        _check_structure(self)

    # -- domain handling -------------------------------------------------

    @property
    def lo(self) -> np.ndarray:
        return self.domain[:, 0]

    @property
    def hi(self) -> np.ndarray:
        return self.domain[:, 1]

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def wrap(self, x):
        """Map points back into the box (periodic mode only)."""
        width = self.hi - self.lo
        return self.lo + np.mod(x - self.lo, width)

    def admit(self, x):
        """Apply the domain policy to evaluation points.

        Periodic models wrap, strict models raise on exit, lenient models
        clamp to the box.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.periodic:
            return self.wrap(x)
        if self.strict:
            bad = ~self.inside(x)
            if np.any(bad):
                first = np.asarray(x).reshape(-1, self.dim)[np.flatnonzero(np.ravel(bad))[0]]
                raise DomainError(f"point {first.tolist()} outside domain {self.domain.tolist()}")
            return x
        return np.clip(x, self.lo, self.hi)

    # -- field evaluation ------------------------------------------------

    def damping_factor(self, x) -> np.ndarray:
        d = self.velocity.damping
        if not d.enabled or self.periodic:
            return np.ones(x.shape[:-1])
        out = np.ones(x.shape[:-1])
        edge = d.margin + d.ramp
        near = np.any((x < self.lo + edge) | (x > self.hi - edge), axis=-1)
        if np.any(near):
            xn = x[near]
            below = _smoothstep((xn - self.lo - d.margin) / d.ramp)
            above = _smoothstep((self.hi - xn - d.margin) / d.ramp)
            out[near] = np.prod(below * above, axis=-1)
        return out

    def raw_velocity(self, x, y) -> np.ndarray:
        """Velocity without domain policy; ``x`` is ``(N, d)``, ``y`` is ``(N,)``."""
        vf = self.velocity
        if vf.family == "constant-per-y":
            v = vf.constants[y]
        elif vf.family == "linear-per-y":
            v = np.einsum("nij,nj->ni", vf.matrices[y], x)
        else:
            v = np.zeros_like(x)
            for k in range(len(vf.bump_owner)):
                mine = y == vf.bump_owner[k]
                if not np.any(mine):
                    continue
                r2 = np.sum((x - vf.bump_center[k]) ** 2, axis=-1)
                g = np.exp(-0.5 * r2 / vf.bump_width[k] ** 2) * mine
                v = v + g[:, None] * vf.bump_amplitude[k]
        return v * self.damping_factor(x)[:, None]

    def velocity_at(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xs = self.admit(np.atleast_2d(x))
        ys = np.broadcast_to(np.asarray(y, dtype=np.int64), xs.shape[:1])
        v = self.raw_velocity(xs, ys)
        return v[0] if single else v

    def divergence(self, x, y) -> np.ndarray:
        """Central-difference divergence of the field with spacing ``h_div``."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.broadcast_to(np.asarray(y, dtype=np.int64), x.shape[:1])
        h = self.h_div
        div = np.zeros(x.shape[0])
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            div += (self.raw_velocity(x + e, y)[:, i] - self.raw_velocity(x - e, y)[:, i]) / (2 * h)
        return div

    def kernel_at(self, x) -> np.ndarray:
        """Transition probabilities ``psi(x, .)``, shape ``(N, m)``."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xs = self.admit(np.atleast_2d(x))
        p = self.raw_kernel(xs)
        return p[0] if single else p

    def raw_kernel(self, x) -> np.ndarray:
        k = self.kernel
        n = x.shape[0]
        m = self.n_cognitive
        if k.family == "uniform":
            return np.full((n, m), 1.0 / m)
        if k.family == "point-mass":
            p = np.zeros((n, m))
            p[:, k.target] = 1.0
            return p
        if k.family == "fixed-weights":
            return np.broadcast_to(k.weights, (n, m)).copy()
        d2 = np.sum((x[:, None, :] - k.centers[None, :, :]) ** 2, axis=-1)
        s = -k.beta * d2
        s -= s.max(axis=1, keepdims=True)
        w = np.exp(s)
        return w / w.sum(axis=1, keepdims=True)

    def initial_pdf(self, x) -> np.ndarray:
        """Initial thought density (for ``point`` this is undefined and raises)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        ini = self.initial
        ok = self.inside(x)
        if ini.family == "uniform-box":
            return ok / np.prod(self.hi - self.lo)
        if ini.family == "gaussian":
            z = (x - ini.mean) / ini.std
            dens = np.prod(np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * ini.std), axis=-1)
            mass = np.prod(ndtr((self.hi - ini.mean) / ini.std) - ndtr((self.lo - ini.mean) / ini.std))
            return ok * dens / mass
        raise ModelError("point initial density has no Lebesgue density")

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "domain": self.domain.tolist(),
            "n_cognitive": self.n_cognitive,
            "velocity": self.velocity.to_dict(self.n_cognitive),
            "kernel": self.kernel.to_dict(),
            "rate": self.rate,
            "initial": self.initial.to_dict(),
            "time_origin": self.time_origin,
            "periodic": self.periodic,
            "strict": self.strict,
            "h_div": self.h_div,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "ModelSpec":
        d = self.to_dict()
        for key, value in changes.items():
            if isinstance(value, VelocityFieldSpec):
                value = value.to_dict(changes.get("n_cognitive", self.n_cognitive))
            elif hasattr(value, "to_dict"):
                value = value.to_dict()
            d[key] = value
        return model_from_dict(d)


def _check_structure(spec: ModelSpec) -> None:
    d, m = spec.dim, spec.n_cognitive
    if d not in (1, 2, 3):
        raise ModelError(f"dim must be 1, 2 or 3, got {d}")
    if m < 1:
        raise ModelError("cognitive space must have at least one state")
    if spec.domain.shape != (d, 2) or np.any(spec.domain[:, 1] <= spec.domain[:, 0]):
        raise ModelError("domain must be d rows of [lo, hi] with lo < hi")
    if not np.isfinite(spec.rate) or spec.rate <= 0:
        raise ModelError(f"renewal rate must be > 0, got {spec.rate}")
    if spec.time_origin not in TIME_ORIGINS:
        raise ModelError(f"time_origin must be one of {TIME_ORIGINS}")
    if spec.h_div <= 0:
        raise ModelError("h_div must be > 0")

    vf = spec.velocity
    if vf.family not in VELOCITY_FAMILIES:
        raise ModelError(f"unknown velocity family {vf.family!r}")
    if vf.family == "constant-per-y" and (vf.constants is None or vf.constants.shape != (m, d)):
        raise ModelError(f"constant-per-y needs {m} vectors of length {d}")
    if vf.family == "linear-per-y" and (vf.matrices is None or vf.matrices.shape != (m, d, d)):
        raise ModelError(f"linear-per-y needs {m} matrices of shape {d}x{d}")
    if vf.family == "gaussian-bump-mixture":
        if vf.bump_owner is None or (len(vf.bump_owner) and vf.bump_owner.max() >= m):
            raise ModelError(f"gaussian-bump-mixture needs bump lists for {m} states")
        if vf.bump_center.shape[1:] != (d,) or vf.bump_amplitude.shape[1:] != (d,):
            raise ModelError("bump centers and amplitudes must have length d")
        if np.any(vf.bump_width <= 0):
            raise ModelError("bump widths must be > 0")
    if vf.damping.enabled and (vf.damping.margin < 0 or vf.damping.ramp <= 0):
        raise ModelError("damping needs margin >= 0 and ramp > 0")
    if vf.damping.enabled and spec.periodic:
        raise ModelError("periodic mode requires damping to be disabled")

    k = spec.kernel
    if k.family not in KERNEL_FAMILIES:
        raise ModelError(f"unknown kernel family {k.family!r}")
    if k.family == "point-mass" and not (k.target is not None and 0 <= k.target < m):
        raise ModelError(f"point-mass target must be in [0, {m})")
    if k.family == "softmax-score":
        if k.centers is None or k.centers.shape != (m, d):
            raise ModelError(f"softmax-score needs {m} centers of length {d}")
        if k.beta < 0:
            raise ModelError("softmax-score needs beta >= 0")
    if k.family == "fixed-weights" and (k.weights is None or k.weights.shape != (m,)):
        raise ModelError(f"fixed-weights needs {m} weights")

    ini = spec.initial
    if ini.family not in INITIAL_FAMILIES:
        raise ModelError(f"unknown initial density {ini.family!r}")
    if ini.family == "gaussian":
        if ini.mean is None or ini.mean.shape != (d,) or ini.std.shape != (d,) or np.any(ini.std <= 0):
            raise ModelError("gaussian initial density needs mean and positive std of length d")
    if ini.family == "point":
        if ini.point is None or ini.point.shape != (d,) or not spec.inside(ini.point):
            raise ModelError("point initial density needs a point inside the domain")


# -- module-level operations -------------------------------------------------


def eval_velocity(spec: ModelSpec, x, y):
    """v(x, y) under the model's domain policy."""
    return spec.velocity_at(x, y)


def eval_kernel(spec: ModelSpec, x):
    """psi(x, .) as a probability vector over cognitive states."""
    return spec.kernel_at(x)


def kernel_lipschitz(spec: ModelSpec) -> float:
    """Lipschitz constant of ``x -> psi(x, y)`` (max over y, Euclidean norm).

    State-independent families have constant 0. For softmax-score with
    scores ``-beta |x - c_y|^2`` the gradient of ``psi_y`` is
    ``psi_y * sum_k psi_k 2 beta (c_y - c_k)``, bounded by ``2 beta`` times
    the largest pairwise center distance.
    """
    k = spec.kernel
    if k.family != "softmax-score":
        return 0.0
    diff = k.centers[:, None, :] - k.centers[None, :, :]
    return 2.0 * k.beta * float(np.sqrt((diff**2).sum(-1)).max())


def lattice(spec: ModelSpec, min_points: int = 1000) -> np.ndarray:
    """Deterministic tensor lattice of at least ``min_points`` domain points."""
    per_axis = int(np.ceil(min_points ** (1.0 / spec.dim)))
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in spec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)  # (name, passed, detail)

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append((name, bool(passed), detail))

    def failures(self) -> list:
        return [c for c in self.checks if not c[1]]

    def raise_if_failed(self) -> None:
        if not self.ok:
            msg = "; ".join(f"{n}: {d}" for n, _, d in self.failures())
            raise ModelError(f"model validation failed: {msg}")

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [{"name": n, "pass": p, "detail": d} for n, p, d in self.checks],
        }


def validate_model(spec: ModelSpec, min_points: int = 1000, tol: float = 1e-9) -> ValidationReport:
    """Numerically check kernel and field invariants on a deterministic lattice.

    Structural problems (rate, array lengths) are rejected when the spec is
    built; this reports the numerical invariants.
    """
    report = ValidationReport()
    report.add("rate-positive", spec.rate > 0, f"rate={spec.rate}")
    pts = lattice(spec, min_points)
    report.add("lattice-size", len(pts) >= min_points, f"{len(pts)} points")

    p = spec.raw_kernel(pts)
    norm_err = float(np.abs(p.sum(axis=1) - 1.0).max())
    report.add("kernel-normalized", norm_err <= tol, f"max |sum psi - 1| = {norm_err:.3e}")
    report.add("kernel-nonnegative", float(p.min()) >= 0.0, f"min psi = {float(p.min()):.3e}")

    # Lipschitz continuity along each lattice axis
    per_axis = int(np.ceil(min_points ** (1.0 / spec.dim)))
    grid = p.reshape((per_axis,) * spec.dim + (spec.n_cognitive,))
    L = kernel_lipschitz(spec)
    worst = 0.0
    for i in range(spec.dim):
        h = (spec.hi[i] - spec.lo[i]) / (per_axis - 1)
        jump = np.abs(np.diff(grid, axis=i)).max() if per_axis > 1 else 0.0
        worst = max(worst, float(jump) - L * h)
    report.add("kernel-lipschitz", worst <= 1e-12, f"L={L:.4g}, max excess={worst:.3e}")

    ys = np.repeat(np.arange(spec.n_cognitive), len(pts))
    xs = np.tile(pts, (spec.n_cognitive, 1))
    v = spec.raw_velocity(xs, ys)
    report.add("velocity-finite", bool(np.all(np.isfinite(v))), "")
    if spec.velocity.damping.enabled and not spec.periodic:
        d = spec.velocity.damping
        near = np.any((xs - spec.lo < d.margin) | (spec.hi - xs < d.margin), axis=1)
        vmax = float(np.abs(v[near]).max()) if np.any(near) else 0.0
        report.add("velocity-zero-near-boundary", vmax == 0.0, f"max |v| in margin = {vmax:.3e}")
    return report


# -- JSON loading ------------------------------------------------------------

_TOP_KEYS = {
    "dim",
    "domain",
    "n_cognitive",
    "velocity",
    "kernel",
    "rate",
    "initial",
    "time_origin",
    "periodic",
    "strict",
    "h_div",
}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ModelError(f"unknown keys in {where}: {sorted(extra)}")


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ModelError(f"missing key {key!r} in {where}")
    return d[key]


def model_from_dict(d: dict, strict: bool = True) -> ModelSpec:
    """Build a :class:`ModelSpec` from its JSON document form."""
    if not isinstance(d, dict):
        raise ModelError("model document must be an object")
    if strict:
        _reject_unknown(d, _TOP_KEYS, "model")
    dim = int(_need(d, "dim", "model"))
    m = int(_need(d, "n_cognitive", "model"))
    try:
        vd = dict(_need(d, "velocity", "model"))
        kd = dict(_need(d, "kernel", "model"))
        idd = dict(_need(d, "initial", "model"))
        rate = float(_need(d, "rate", "model"))
        domain = _frozen(_need(d, "domain", "model"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from exc

    if strict:
        _reject_unknown(vd, {"family", "constants", "matrices", "bumps", "damping"}, "velocity")
        _reject_unknown(kd, {"family", "target", "centers", "beta", "weights"}, "kernel")
        _reject_unknown(idd, {"family", "mean", "std", "point"}, "initial")
    damp = dict(vd.get("damping", {}))
    if strict:
        _reject_unknown(damp, {"enabled", "margin", "ramp"}, "velocity.damping")
    damping = Damping(
        enabled=bool(damp.get("enabled", True)),
        margin=float(damp.get("margin", 0.05)),
        ramp=float(damp.get("ramp", 0.25)),
    )

    family = _need(vd, "family", "velocity")
    try:
        if family == "constant-per-y":
            velocity = VelocityFieldSpec(family, constants=_frozen(_need(vd, "constants", "velocity")), damping=damping)
        elif family == "linear-per-y":
            velocity = VelocityFieldSpec(family, matrices=_frozen(_need(vd, "matrices", "velocity")), damping=damping)
        elif family == "gaussian-bump-mixture":
            bumps = _need(vd, "bumps", "velocity")
            if len(bumps) != m:
                raise ModelError(f"gaussian-bump-mixture needs bump lists for {m} states")
            owner, center, width, amp = [], [], [], []
            for y, lst in enumerate(bumps):
                for b in lst:
                    owner.append(y)
                    center.append(b["center"])
                    width.append(b["width"])
                    amp.append(b["amplitude"])
            velocity = VelocityFieldSpec(
                family,
                bump_owner=_frozen(owner, np.int64),
                bump_center=_frozen(center).reshape(-1, dim),
                bump_width=_frozen(width),
                bump_amplitude=_frozen(amp).reshape(-1, dim),
                damping=damping,
            )
        else:
            raise ModelError(f"unknown velocity family {family!r}")

        kfam = _need(kd, "family", "kernel")
        kernel = TransitionKernelSpec(
            kfam,
            target=int(kd["target"]) if "target" in kd else None,
            centers=_frozen(kd["centers"]).reshape(-1, dim) if "centers" in kd else None,
            beta=float(kd.get("beta", 0.0)),
            weights=_frozen(kd["weights"]) if "weights" in kd else None,
        )

        ifam = _need(idd, "family", "initial")
        initial = InitialDensitySpec(
            ifam,
            mean=_frozen(idd["mean"]) if "mean" in idd else None,
            std=_frozen(idd["std"]) if "std" in idd else None,
            point=_frozen(idd["point"]) if "point" in idd else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed model document: {exc}") from exc

    return ModelSpec(
        dim=dim,
        domain=domain,
        n_cognitive=m,
        velocity=velocity,
        kernel=kernel,
        rate=rate,
        initial=initial,
        time_origin=str(d.get("time_origin", "jump-at-zero")),
        periodic=bool(d.get("periodic", False)),
        strict=bool(d.get("strict", True)),
        h_div=float(d.get("h_div", 1e-5)),
    )


def load_model(path, strict: bool = True) -> ModelSpec:
    with open(Path(path)) as fh:
        return model_from_dict(json.load(fh), strict=strict)
