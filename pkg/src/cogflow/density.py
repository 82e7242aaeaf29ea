"""Histogram densities from ensembles and Monte Carlo checks of the density
evolution laws.

A :class:`DensityGrid` holds the joint density of ``(x, y, tau)`` on a
tensor grid: Lebesgue density in ``x`` and ``tau``, counting measure in
``y``. Particles that never renewed sit in a separate atom slot whose
values are a density in ``x`` but a mass in ``tau``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import reverse_points
from .model import ModelSpec
from .pdmp import EnsembleSnapshot

__all__ = [
    "GridConfig",
    "DensityGrid",
    "DensityHistory",
    "ResidualReport",
    "estimate_density",
    "continuity_residual",
    "kernel_rhs",
    "kernel_rhs_field",
    "kernel_equation_check",
    "rhs_form_difference",
    "interpolate_marginal",
    "scaling_ratios",
    "save_grids",
    "load_grids",
    "write_grid_csv",
    "write_long_csv",
]

THEOREM_IDS = (
    "continuity-jump-at-zero",
    "continuity-stationary",
    "kernel-jump-at-zero",
    "kernel-stationary",
)


@dataclass(frozen=True)
class GridConfig:
    """Histogram layout.

    ``bins`` is per x-axis; the box comes from the model. ``overflow``
    allows ``tau > tau_max`` (stationary runs), kept as a separate mass.
    """

    domain: tuple  # ((lo, hi), ...)
    n_cognitive: int
    bins: tuple
    tau_bins: int
    tau_max: float
    overflow: bool = False
    atom: bool = True

    @classmethod
    def for_model(cls, spec: ModelSpec, bins, tau_bins: int, tau_max: float, overflow: bool | None = None):
        bins = tuple(int(b) for b in np.broadcast_to(np.atleast_1d(bins), (spec.dim,)))
        return cls(
            domain=tuple(tuple(map(float, r)) for r in spec.domain),
            n_cognitive=spec.n_cognitive,
            bins=bins,
            tau_bins=int(tau_bins),
            tau_max=float(tau_max),
            overflow=(spec.time_origin != "jump-at-zero") if overflow is None else overflow,
            atom=spec.time_origin == "jump-at-zero",
        )

    @property
    def shape(self) -> tuple:
        return self.bins + (self.n_cognitive, self.tau_bins + 2)

    def __call__(self, snapshot: EnsembleSnapshot) -> np.ndarray:
        return self.counts(snapshot)

    def counts(self, snapshot: EnsembleSnapshot) -> np.ndarray:
        """Integer counts of shape ``bins + (m, tau_bins + 2)``.

        The last two tau slots are the atom and the overflow.
        """
        x = snapshot.x
        flat = np.zeros(len(snapshot), dtype=np.int64)
        for i, (lo, hi) in enumerate(self.domain):
            nb = self.bins[i]
            j = np.floor((x[:, i] - lo) / (hi - lo) * nb).astype(np.int64)
            if np.any((j < 0) | (j > nb)):
                raise ValueError("particle outside the grid domain")
            flat = flat * nb + np.minimum(j, nb - 1)
        tau = snapshot.tau
        k = np.minimum(np.floor(tau / self.tau_max * self.tau_bins).astype(np.int64), self.tau_bins - 1)
        k = np.maximum(k, 0)
        atom = snapshot.t_last == snapshot.t_start if self.atom else np.zeros(len(tau), bool)
        over = (tau > self.tau_max) & ~atom
        if np.any(over) and not self.overflow:
            raise ValueError(f"tau up to {tau[over].max():.4g} exceeds tau_max={self.tau_max}")
        k = np.where(atom, self.tau_bins, np.where(over, self.tau_bins + 1, k))
        ntau = self.tau_bins + 2
        flat = (flat * self.n_cognitive + snapshot.y) * ntau + k
        size = int(np.prod(self.shape))
        return np.bincount(flat, minlength=size).reshape(self.shape)


@dataclass(frozen=True, eq=False)
class DensityGrid:
    config: GridConfig
    counts: np.ndarray  # bins + (m, tau_bins + 2)
    n: int
    t: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("empty ensemble")

    # geometry
    @property
    def dim(self) -> int:
        return len(self.config.bins)

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / nb for (lo, hi), nb in zip(self.config.domain, self.config.bins)])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def dtau(self) -> float:
        return self.config.tau_max / self.config.tau_bins

    def edges(self, axis: int) -> np.ndarray:
        lo, hi = self.config.domain[axis]
        return np.linspace(lo, hi, self.config.bins[axis] + 1)

    def centers(self, axis: int) -> np.ndarray:
        e = self.edges(axis)
        return 0.5 * (e[1:] + e[:-1])

    @property
    def tau_centers(self) -> np.ndarray:
        return (np.arange(self.config.tau_bins) + 0.5) * self.dtau

    def center_points(self) -> np.ndarray:
        """All x-cell centers, shape ``(prod(bins), d)`` in C order."""
        mesh = np.meshgrid(*[self.centers(i) for i in range(self.dim)], indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    # densities
    @property
    def joint(self) -> np.ndarray:
        return self.counts[..., : self.config.tau_bins] / (self.n * self.cell_volume * self.dtau)

    @property
    def atom(self) -> np.ndarray:
        return self.counts[..., self.config.tau_bins] / (self.n * self.cell_volume)

    @property
    def overflow(self) -> np.ndarray:
        return self.counts[..., self.config.tau_bins + 1] / (self.n * self.cell_volume)

    @property
    def xy_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=-1) / (self.n * self.cell_volume)

    @property
    def x_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=(-1, -2)) / (self.n * self.cell_volume)

    def marginal_from_joint(self) -> np.ndarray:
        """x-marginal rebuilt by integrating the stored joint, atom and overflow."""
        return (self.joint * self.dtau).sum(axis=(-1, -2)) + self.atom.sum(-1) + self.overflow.sum(-1)

    def total(self) -> float:
        v = self.cell_volume
        return float(
            (self.joint * v * self.dtau).sum() + (self.atom * v).sum() + (self.overflow * v).sum()
        )

    def atom_mass(self) -> float:
        return float(self.counts[..., self.config.tau_bins].sum() / self.n)

    # Monte Carlo standard errors: sqrt(p (1 - p) / N) / cell measure
    def _se(self, counts, measure):
        p = counts / self.n
        return np.sqrt(p * (1.0 - p) / self.n) / measure

    @property
    def joint_se(self) -> np.ndarray:
        return self._se(self.counts[..., : self.config.tau_bins], self.cell_volume * self.dtau)

    @property
    def atom_se(self) -> np.ndarray:
        return self._se(self.counts[..., self.config.tau_bins], self.cell_volume)

    @property
    def xy_se(self) -> np.ndarray:
        return self._se(self.counts.sum(axis=-1), self.cell_volume)

    @property
    def x_se(self) -> np.ndarray:
        return self._se(self.counts.sum(axis=(-1, -2)), self.cell_volume)

    def compatible(self, other: "DensityGrid") -> bool:
        return self.config == other.config

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            counts=self.counts,
            n=self.n,
            t=self.t,
            config=json.dumps(_config_dict(self.config)),
        )

    @classmethod
    def load(cls, path) -> "DensityGrid":
        """Load a single grid; for a stored history the last time is returned."""
        return load_grids(path)[-1]


def save_grids(grids, path) -> None:
    """Store a time series of grids sharing one layout and ensemble size."""
    grids = list(grids)
    if not grids or any(not g.compatible(grids[0]) or g.n != grids[0].n for g in grids):
        raise ValueError("need one or more grids with a shared layout and ensemble size")
    np.savez_compressed(
        path,
        times=np.array([g.t for g in grids]),
        counts=np.stack([g.counts for g in grids]),
        n=grids[0].n,
        config=json.dumps(_config_dict(grids[0].config)),
    )


def load_grids(path) -> list:
    """Grids stored by :meth:`DensityGrid.save` or :func:`save_grids`, in time order."""
    with np.load(path) as z:
        cfg = _config_from_dict(json.loads(str(z["config"])))
        n = int(z["n"])
        if "times" in z:
            return [DensityGrid(cfg, c, n, float(t)) for t, c in zip(z["times"], z["counts"])]
        return [DensityGrid(cfg, z["counts"], n, float(z["t"]))]


def _config_dict(cfg: GridConfig) -> dict:
    return {
        "domain": [list(r) for r in cfg.domain],
        "n_cognitive": cfg.n_cognitive,
        "bins": list(cfg.bins),
        "tau_bins": cfg.tau_bins,
        "tau_max": cfg.tau_max,
        "overflow": cfg.overflow,
        "atom": cfg.atom,
    }


def _config_from_dict(d: dict) -> GridConfig:
    return GridConfig(
        domain=tuple(tuple(r) for r in d["domain"]),
        n_cognitive=d["n_cognitive"],
        bins=tuple(d["bins"]),
        tau_bins=d["tau_bins"],
        tau_max=d["tau_max"],
        overflow=d["overflow"],
        atom=d["atom"],
    )


def estimate_density(snapshot: EnsembleSnapshot, grid: GridConfig) -> DensityGrid:
    """Histogram estimate: counts / (N * cell measure); atom as x-density times tau-mass."""
    if len(snapshot) < 1:
        raise ValueError("empty ensemble")
    return DensityGrid(grid, grid.counts(snapshot), len(snapshot), snapshot.t)


class DensityHistory:
    """Time-indexed density grids with nearest-time lookup."""

    def __init__(self, grids, tol: float):
        self.grids = dict(sorted((float(g.t), g) for g in grids))
        self.times = np.array(list(self.grids))
        self.tol = float(tol)

    def at(self, t: float) -> DensityGrid:
        if not len(self.times):
            raise KeyError("empty history")
        i = int(np.argmin(np.abs(self.times - t)))
        # slack absorbs rounding when t sits half way between stored times
        if abs(self.times[i] - t) > self.tol * (1 + 1e-9) + 1e-12:
            raise KeyError(f"no stored grid within {self.tol:g} of t={t:.6g}")
        return self.grids[self.times[i]]

    def __len__(self):
        return len(self.grids)


# -- residual reports ------------------------------------------------------------


@dataclass
class ResidualReport:
    theorem_id: str
    l1: float
    linf: float
    noise_l1: float
    noise_linf: float
    k_noise: float
    metadata: dict = field(default_factory=dict)
    # optional separately-judged atom comparison
    atom_l1: float | None = None
    atom_noise_l1: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok = self.l1 <= self.k_noise * self.noise_l1
        if self.atom_l1 is not None:
            ok = ok and self.atom_l1 <= self.k_noise * self.atom_noise_l1
        return bool(ok)

    def to_dict(self) -> dict:
        return {
            "theorem_id": self.theorem_id,
            "residual": {"l1": self.l1, "linf": self.linf},
            "noise_floor": {"l1": self.noise_l1, "linf": self.noise_linf},
            "k_noise": self.k_noise,
            "atom": None
            if self.atom_l1 is None
            else {"l1": self.atom_l1, "noise_l1": self.atom_noise_l1},
            "pass": self.passed,
            "metadata": self.metadata,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualReport":
        atom = d.get("atom") or {}
        return cls(
            theorem_id=d["theorem_id"],
            l1=d["residual"]["l1"],
            linf=d["residual"]["linf"],
            noise_l1=d["noise_floor"]["l1"],
            noise_linf=d["noise_floor"]["linf"],
            k_noise=d["k_noise"],
            metadata=d.get("metadata", {}),
            atom_l1=atom.get("l1"),
            atom_noise_l1=atom.get("noise_l1"),
            extra=d.get("extra", {}),
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# -- continuity equation -------------------------------------------------------


def _central_diff(a, axis: int, h: float, periodic: bool):
    if periodic:
        return (np.roll(a, -1, axis) - np.roll(a, 1, axis)) / (2 * h)
    out = np.zeros_like(a)
    sl_mid = [slice(None)] * a.ndim
    sl_hi = [slice(None)] * a.ndim
    sl_lo = [slice(None)] * a.ndim
    sl_mid[axis], sl_hi[axis], sl_lo[axis] = slice(1, -1), slice(2, None), slice(None, -2)
    out[tuple(sl_mid)] = (a[tuple(sl_hi)] - a[tuple(sl_lo)]) / (2 * h)
    return out


def _central_var(var, axis: int, h: float, periodic: bool):
    """Variance of the central difference of independent cells."""
    if periodic:
        return (np.roll(var, -1, axis) + np.roll(var, 1, axis)) / (4 * h * h)
    out = np.zeros_like(var)
    sl_mid = [slice(None)] * var.ndim
    sl_hi = [slice(None)] * var.ndim
    sl_lo = [slice(None)] * var.ndim
    sl_mid[axis], sl_hi[axis], sl_lo[axis] = slice(1, -1), slice(2, None), slice(None, -2)
    out[tuple(sl_mid)] = (var[tuple(sl_hi)] + var[tuple(sl_lo)]) / (4 * h * h)
    return out


def _interior(shape, periodic: bool):
    mask = np.ones(shape, dtype=bool)
    if periodic:
        return mask
    for axis in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[axis] = 0
        mask[tuple(sl)] = False
        sl[axis] = -1
        mask[tuple(sl)] = False
    return mask


def _velocity_table(spec: ModelSpec, grid: DensityGrid) -> np.ndarray:
    """v at x-cell centers for every y, shape ``bins + (m, d)``."""
    pts = grid.center_points()
    m = spec.n_cognitive
    v = np.stack([spec.raw_velocity(pts, np.full(len(pts), y)) for y in range(m)], axis=1)
    return v.reshape(tuple(grid.config.bins) + (m, spec.dim))


def continuity_residual(grid_t: DensityGrid, grid_t2: DensityGrid, spec: ModelSpec, k_noise: float = 4.0) -> ResidualReport:
    """Residual of ``d rho/dt + div_x sum_y rho(x, y; t) v(x, y) = 0``.

    Forward difference in time, central differences in space, flux from the
    earlier grid. The outermost cell ring is excluded (kept in periodic
    mode, where the stencil wraps). The noise floor propagates per-cell
    binomial standard errors through the same stencils, treating cells as
    independent.
    """
    if not grid_t.compatible(grid_t2):
        raise ValueError("grids have different layouts")
    dt = grid_t2.t - grid_t.t
    if dt <= 0:
        raise ValueError("second grid must be later")
    periodic = spec.periodic
    w = grid_t.widths
    drho = (grid_t2.x_marginal - grid_t.x_marginal) / dt
    var = (grid_t.x_se**2 + grid_t2.x_se**2) / dt**2
    vt = _velocity_table(spec, grid_t)
    rho_xy = grid_t.xy_marginal
    se_xy = grid_t.xy_se
    div = np.zeros_like(drho)
    for axis in range(grid_t.dim):
        flux = (rho_xy * vt[..., axis]).sum(-1)
        flux_var = (se_xy**2 * vt[..., axis] ** 2).sum(-1)
        div += _central_diff(flux, axis, w[axis], periodic)
        var += _central_var(flux_var, axis, w[axis], periodic)
    resid = drho + div
    inner = _interior(drho.shape, periodic)
    sigma = np.sqrt(var)
    vol = grid_t.cell_volume
    tid = "continuity-jump-at-zero" if spec.time_origin == "jump-at-zero" else "continuity-stationary"
    return ResidualReport(
        theorem_id=tid,
        l1=float(np.abs(resid[inner]).sum() * vol),
        linf=float(np.abs(resid[inner]).max()),
        noise_l1=float(sigma[inner].sum() * vol),
        noise_linf=float(sigma[inner].max()),
        k_noise=float(k_noise),
        metadata={
            "n": grid_t.n,
            "bins": list(grid_t.config.bins),
            "dt": dt,
            "t": grid_t.t,
            "evaluation_region": "interior cells" if not periodic else "all cells (periodic)",
            "model_hash": spec.digest(),
        },
    )


# -- renewal kernel ------------------------------------------------------------------


def interpolate_marginal(grid: DensityGrid, pts, periodic: bool = False):
    """Multilinear interpolation of the x-marginal between cell centers.

    Returns values and the propagated standard error. Outside the outermost
    centers the nearest cell value is used (wrapped in periodic mode).
    """
    pts = np.atleast_2d(pts)
    vals = grid.x_marginal
    se = grid.x_se
    bins = grid.config.bins
    lows, fracs = [], []
    for i in range(grid.dim):
        lo, hi = grid.config.domain[i]
        h = (hi - lo) / bins[i]
        f = (pts[:, i] - lo) / h - 0.5
        if periodic:
            i0 = np.floor(f).astype(np.int64)
            lows.append(i0)
            fracs.append(f - i0)
        else:
            f = np.clip(f, 0.0, bins[i] - 1.0)
            i0 = np.minimum(np.floor(f).astype(np.int64), max(bins[i] - 2, 0))
            lows.append(i0)
            fracs.append(f - i0)
    out = np.zeros(len(pts))
    var = np.zeros(len(pts))
    for corner in itertools.product((0, 1), repeat=grid.dim):
        wgt = np.ones(len(pts))
        index = []
        for i, c in enumerate(corner):
            wgt = wgt * (fracs[i] if c else 1.0 - fracs[i])
            j = lows[i] + c
            index.append(np.mod(j, bins[i]) if periodic else np.minimum(j, bins[i] - 1))
        index = tuple(index)
        out += wgt * vals[index]
        var += wgt**2 * se[index] ** 2
    return out, np.sqrt(var)


def kernel_rhs_field(
    spec: ModelSpec,
    x,
    y,
    tau,
    t: float,
    history: DensityHistory,
    step: float,
    atom: bool = False,
    weight=None,
):
    """Vectorized right-hand side of the renewal integral equation.

    ``coef * rho(x*; t - tau) * psi(x*, y) * J`` where ``x*`` is the reverse
    flow of ``x`` for time ``tau``, ``J`` the Liouville ratio, and ``coef``
    is ``rate * exp(-rate * tau)`` for the continuous part or ``weight``
    for the atom. Reversed points that leave the domain contribute zero.

    Returns values and their propagated standard errors.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = len(x)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (n,))
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (n,))
    if np.any(tau < 0):
        raise ValueError("tau must be >= 0")
    xs, ratio, exited = reverse_points(spec, x, y, tau, step, on_exit="flag")
    if atom:
        coef = np.broadcast_to(np.asarray(weight, dtype=np.float64), (n,))
    else:
        coef = spec.rate * np.exp(-spec.rate * tau)
    rho = np.zeros(n)
    rho_se = np.zeros(n)
    src = t - tau
    for s in np.unique(src):
        sel = src == s
        g = history.at(s)
        rho[sel], rho_se[sel] = interpolate_marginal(g, xs[sel], spec.periodic)
    inside = ~exited & (spec.periodic | spec.inside(xs))
    psi = np.zeros(n)
    if np.any(inside):
        psi[inside] = spec.raw_kernel(xs[inside])[np.arange(inside.sum()), y[inside]]
    scale = coef * psi * ratio * inside
    return scale * rho, np.abs(scale) * rho_se


def kernel_rhs(
    spec: ModelSpec,
    x,
    y: int,
    tau: float,
    t: float,
    rho_history: DensityHistory,
    step: float = 1e-2,
    atom_weight: float | None = None,
) -> float:
    """Right-hand side at a single ``(x, y, tau; t)``.

    With ``atom_weight`` given, evaluates the atom term at
    ``tau = t - t_start`` with that weight in place of the exponential
    density.
    """
    val, _ = kernel_rhs_field(
        spec,
        np.asarray(x, dtype=np.float64).reshape(1, spec.dim),
        [y],
        [tau],
        t,
        rho_history,
        step,
        atom=atom_weight is not None,
        weight=atom_weight,
    )
    return float(val[0])


def _cell_queries(grid: DensityGrid):
    """(x, y, tau) at every joint cell center, flattened in C order."""
    pts = grid.center_points()
    m = grid.config.n_cognitive
    taus = grid.tau_centers
    nx, nt = len(pts), len(taus)
    x = np.repeat(pts, m * nt, axis=0)
    y = np.tile(np.repeat(np.arange(m), nt), nx)
    tau = np.tile(taus, nx * m)
    return x, y, tau


def kernel_equation_check(
    spec: ModelSpec,
    grid: DensityGrid,
    history: DensityHistory,
    step: float,
    k_noise: float = 4.0,
    t_start: float = 0.0,
) -> ResidualReport:
    """Compare the empirical joint density at ``grid.t`` with the renewal
    right-hand side evaluated at cell centers.

    In jump-at-zero mode the never-renewed atom is compared separately,
    using the measured atom weight; the report records the measured weight
    next to the survival probability ``exp(-rate t)`` and the complement
    ``1 - exp(-rate t)``.
    """
    t = grid.t
    elapsed = t - t_start
    if grid.tau_centers.max() > elapsed + 1e-12:
        raise ValueError("tau grid extends beyond the simulated history")
    x, y, tau = _cell_queries(grid)
    rhs, rhs_se = kernel_rhs_field(spec, x, y, tau, t, history, step)
    shape = grid.joint.shape
    rhs = rhs.reshape(shape)
    rhs_se = rhs_se.reshape(shape)
    resid = grid.joint - rhs
    sigma = np.sqrt(grid.joint_se**2 + rhs_se**2)
    meas = grid.cell_volume * grid.dtau
    jump_at_zero = spec.time_origin == "jump-at-zero"
    report = ResidualReport(
        theorem_id="kernel-jump-at-zero" if jump_at_zero else "kernel-stationary",
        l1=float(np.abs(resid).sum() * meas),
        linf=float(np.abs(resid).max()),
        noise_l1=float(sigma.sum() * meas),
        noise_linf=float(sigma.max()),
        k_noise=float(k_noise),
        metadata={
            "n": grid.n,
            "bins": list(grid.config.bins),
            "tau_bins": grid.config.tau_bins,
            "tau_max": grid.config.tau_max,
            "t": t,
            "step": step,
            "history_tolerance": history.tol,
            "evaluation": "cell centers, all cells",
            "model_hash": spec.digest(),
        },
    )
    if jump_at_zero:
        w = grid.atom_mass()
        pts = grid.center_points()
        m = spec.n_cognitive
        ax = np.repeat(pts, m, axis=0)
        ay = np.tile(np.arange(m), len(pts))
        pred, pred_se = kernel_rhs_field(spec, ax, ay, elapsed, t, history, step, atom=True, weight=w)
        pred = pred.reshape(grid.atom.shape)
        pred_se = pred_se.reshape(grid.atom.shape)
        a_sigma = np.sqrt(grid.atom_se**2 + pred_se**2)
        report.atom_l1 = float(np.abs(grid.atom - pred).sum() * grid.cell_volume)
        report.atom_noise_l1 = float(a_sigma.sum() * grid.cell_volume)
        report.extra["atom_weight"] = atom_summary(w, spec.rate, elapsed, grid.n)
    return report


def atom_summary(measured: float, rate: float, elapsed: float, n: int, k: float = 4.0) -> dict:
    """Measured never-renewed fraction against the two candidate coefficients."""
    survival = float(np.exp(-rate * elapsed))
    complement = 1.0 - survival
    se = float(np.sqrt(survival * (1.0 - survival) / n))
    return {
        "measured": measured,
        "survival_exp_minus_rate_t": survival,
        "complement_one_minus_exp": complement,
        "standard_error": se,
        "z_survival": (measured - survival) / se if se > 0 else 0.0,
        "z_complement": (measured - complement) / se if se > 0 else 0.0,
        "consistent_with_survival": abs(measured - survival) <= k * se,
        "consistent_with_complement": abs(measured - complement) <= k * se,
        "note": "atom coefficient 1 - exp(-rate t) is inconsistent with the measured never-renewed fraction"
        if abs(measured - complement) > k * se
        else "measured fraction does not discriminate the two coefficients",
    }


def rhs_form_difference(spec: ModelSpec, grid: DensityGrid, history: DensityHistory, step: float, t_start: float = 0.0) -> dict:
    """L1 distance between the finite-start right-hand side (continuous part
    plus an ``exp(-rate t)`` atom) and the stationary one (no atom).

    Both forms share the continuous part ``rate exp(-rate tau)`` on
    ``tau < t``, so the distance is the mass of the atom term. The same distance with the complement
    coefficient ``1 - exp(-rate t)`` is reported alongside.
    """
    t = grid.t
    elapsed = t - t_start
    pts = grid.center_points()
    m = spec.n_cognitive
    ax = np.repeat(pts, m, axis=0)
    ay = np.tile(np.arange(m), len(pts))
    unit, _ = kernel_rhs_field(spec, ax, ay, elapsed, t, history, step, atom=True, weight=1.0)
    atom_mass = float(unit.sum() * grid.cell_volume)
    survival = float(np.exp(-spec.rate * elapsed))
    return {
        "l1_difference": survival * atom_mass,
        "l1_difference_complement_coefficient": (1.0 - survival) * atom_mass,
        "atom_transport_mass": atom_mass,
        "rate_times_t": spec.rate * elapsed,
    }


def scaling_ratios(reports) -> list:
    """Successive residual L1 ratios for reports at increasing N."""
    return [a.l1 / b.l1 for a, b in zip(reports[:-1], reports[1:])]


# -- exports ---------------------------------------------------------------------


def write_grid_csv(grid: DensityGrid, path, which: str = "x") -> None:
    """Cell indices, centers and values.

    ``which`` is ``"x"`` (x-marginal), ``"xy"`` or ``"joint"`` (atom rows
    carry ``tau_index = atom``).
    """
    d = grid.dim
    pts = grid.center_points()
    ids = np.array(list(np.ndindex(*grid.config.bins)))
    xh = [f"i{k}" for k in range(d)] + [f"x{k}" for k in range(d)]
    lines = []
    if which == "x":
        head = xh + ["value"]
        vals = grid.x_marginal.ravel()
        for c, p, v in zip(ids, pts, vals):
            lines.append([*map(str, c), *(f"{q:.17g}" for q in p), f"{v:.17g}"])
    elif which == "xy":
        head = xh + ["y", "value"]
        vals = grid.xy_marginal.reshape(len(pts), -1)
        for c, p, row in zip(ids, pts, vals):
            for yy, v in enumerate(row):
                lines.append([*map(str, c), *(f"{q:.17g}" for q in p), str(yy), f"{v:.17g}"])
    elif which == "joint":
        head = xh + ["y", "tau_index", "tau", "value"]
        joint = grid.joint.reshape(len(pts), grid.config.n_cognitive, -1)
        atom = grid.atom.reshape(len(pts), -1)
        taus = grid.tau_centers
        for c, p, jrow, arow in zip(ids, pts, joint, atom):
            pre = [*map(str, c), *(f"{q:.17g}" for q in p)]
            for yy in range(grid.config.n_cognitive):
                for k, v in enumerate(jrow[yy]):
                    lines.append(pre + [str(yy), str(k), f"{taus[k]:.17g}", f"{v:.17g}"])
                if grid.config.atom:
                    lines.append(pre + [str(yy), "atom", f"{grid.t:.17g}", f"{arow[yy]:.17g}"])
    else:
        raise ValueError(f"unsupported grid view {which!r}")
    with open(path, "w") as fh:
        fh.write(",".join(head) + "\n")
        fh.writelines(",".join(r) + "\n" for r in lines)


def write_long_csv(grids, path) -> None:
    """Plot-ready long format: one row per (time, x-cell, y)."""
    with open(path, "w") as fh:
        first = True
        for g in grids:
            d = g.dim
            if first:
                fh.write(",".join(["t"] + [f"x{k}" for k in range(d)] + ["y", "density"]) + "\n")
                first = False
            pts = g.center_points()
            vals = g.xy_marginal.reshape(len(pts), -1)
            for p, row in zip(pts, vals):
                for yy, v in enumerate(row):
                    fh.write(",".join([f"{g.t:.17g}", *(f"{q:.17g}" for q in p), str(yy), f"{v:.17g}"]) + "\n")
