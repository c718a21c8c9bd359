"""Discrete wave operator, its transpose, leapfrog time stepping and flux traces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain_weights import DomainConfig

BLOWUP = 1e12


class CFLError(ValueError):
    """Time step too large for the explicit scheme."""


class BlowUpError(FloatingPointError):
    """Leapfrog solution exceeded the blow-up sentinel."""


@dataclass
class SpaceTimeField:
    """Scalar function on the ``(nt + 1, nx + 2)`` grid."""

    values: np.ndarray
    domain: DomainConfig
    dirichlet: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.shape:
            raise ValueError(f"field shape {self.values.shape} != grid {self.domain.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")
        if self.dirichlet and (np.any(self.values[:, 0] != 0) or np.any(self.values[:, -1] != 0)):
            raise ValueError("field tagged Dirichlet-homogeneous has nonzero boundary values")

    @classmethod
    def zeros(cls, domain: DomainConfig, dirichlet: bool = True) -> "SpaceTimeField":
        return cls(np.zeros(domain.shape), domain, dirichlet)

    @classmethod
    def from_function(cls, domain: DomainConfig, f, dirichlet: bool = False) -> "SpaceTimeField":
        X, T = domain.mesh()
        vals = np.broadcast_to(np.asarray(f(X, T), dtype=float), domain.shape).copy()
        if dirichlet:
            vals[:, 0] = vals[:, -1] = 0.0
        return cls(vals, domain, dirichlet)


@dataclass
class Potential:
    """Potential q(x) on the spatial grid, optionally time-dependent p(x, t).

    ``values`` has length ``nx + 2``; the two boundary entries are never used.
    ``time_dependent``, when given, has grid shape and overrides ``values``.
    """

    values: np.ndarray
    m: float = np.inf
    time_dependent: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.time_dependent is not None:
            self.time_dependent = np.asarray(self.time_dependent, dtype=float)

    @classmethod
    def zero(cls, domain: DomainConfig, m: float = np.inf) -> "Potential":
        return cls(np.zeros(domain.nx + 2), m)

    def max_abs(self) -> float:
        src = self.values[1:-1] if self.time_dependent is None else self.time_dependent[:, 1:-1]
        return float(np.max(np.abs(src))) if src.size else 0.0

    def in_ball(self) -> bool:
        return self.max_abs() <= self.m

    def grid(self, domain: DomainConfig) -> np.ndarray:
        """Potential broadcast to grid shape."""
        if self.time_dependent is not None:
            if self.time_dependent.shape != domain.shape:
                raise ValueError("time-dependent potential does not match grid")
            return self.time_dependent
        if self.values.shape != (domain.nx + 2,):
            raise ValueError(f"potential length {self.values.size} != nx + 2 = {domain.nx + 2}")
        return np.broadcast_to(self.values, domain.shape)


@dataclass
class FluxTrace:
    """Outward normal derivative on one boundary side, one value per time level."""

    side: str
    values: np.ndarray
    dt: float
    units: str = "field/length"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")

    def __sub__(self, other: "FluxTrace") -> "FluxTrace":
        if other.side != self.side or other.values.shape != self.values.shape:
            raise ValueError("flux traces do not match")
        return FluxTrace(self.side, self.values - other.values, self.dt, self.units)


@dataclass
class WaveData:
    """Initial data, source and Dirichlet boundary values for one solve.

    Spatial arrays have length ``nx + 2``; boundary time series have length
    ``nt + 1``.  Missing entries default to zero.
    """

    init_pos: np.ndarray
    init_vel: np.ndarray
    source: np.ndarray | None = None
    bc_left: np.ndarray | None = None
    bc_right: np.ndarray | None = None
    check_corners: bool = True

    def __post_init__(self):
        self.init_pos = np.asarray(self.init_pos, dtype=float)
        self.init_vel = np.asarray(self.init_vel, dtype=float)
        for name in ("source", "bc_left", "bc_right"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.asarray(val, dtype=float))
        if self.check_corners:
            for bc, idx in ((self.bc_left, 0), (self.bc_right, -1)):
                if bc is not None and abs(bc[0] - self.init_pos[idx]) > 1e-12:
                    raise ValueError("initial position and boundary data disagree at a corner")

    def boundary(self, side: str, n: int) -> np.ndarray:
        bc = self.bc_left if side == "left" else self.bc_right
        return np.zeros(n) if bc is None else bc


def _check_grid(values: np.ndarray, domain: DomainConfig):
    if values.shape != domain.shape:
        raise ValueError(f"grid mismatch: {values.shape} vs {domain.shape}")


def apply_wave_operator(z: SpaceTimeField, q: Potential) -> SpaceTimeField:
    """Centered discretization of d_tt z - d_xx z + q z.

    The result is defined on interior x and time levels ``1..nt-1``; every
    other entry is zero.
    """
    d = z.domain
    v = z.values
    _check_grid(v, d)
    qg = q.grid(d)
    out = np.zeros(d.shape)
    c = v[1:-1, 1:-1]
    out[1:-1, 1:-1] = (
        (v[2:, 1:-1] - 2.0 * c + v[:-2, 1:-1]) / d.dt**2
        - (v[1:-1, 2:] - 2.0 * c + v[1:-1, :-2]) / d.dx**2
        + qg[1:-1, 1:-1] * c
    )
    return SpaceTimeField(out, d)


def apply_adjoint(r: SpaceTimeField, q: Potential) -> SpaceTimeField:
    """Exact transpose of ``apply_wave_operator`` on Dirichlet fields.

    Only the operator-range entries of ``r`` (interior x, levels 1..nt-1) are
    read.  The output vanishes on the boundary columns.
    """
    d = r.domain
    _check_grid(r.values, d)
    qg = q.grid(d)
    rr = np.zeros(d.shape)
    rr[1:-1, 1:-1] = r.values[1:-1, 1:-1]
    a = rr[1:-1, 1:-1]
    out = np.zeros(d.shape)
    it2, ix2 = 1.0 / d.dt**2, 1.0 / d.dx**2
    out[2:, 1:-1] += it2 * a
    out[:-2, 1:-1] += it2 * a
    out[1:-1, 1:-1] += (-2.0 * it2 + 2.0 * ix2 + qg[1:-1, 1:-1]) * a
    out[1:-1, 2:] -= ix2 * a
    out[1:-1, :-2] -= ix2 * a
    out[:, 0] = out[:, -1] = 0.0
    return SpaceTimeField(out, d)


def boundary_flux(values: np.ndarray, domain: DomainConfig, side: str, order: int = 1) -> np.ndarray:
    """One-sided outward normal derivative on ``side``.

    ``order=1`` is the two-point stencil used throughout (it keeps the flux
    rows of the minimization trivially consistent); ``order=2`` is the
    three-point one-sided stencil.
    """
    if side not in ("left", "right"):
        raise ValueError(f"unknown side {side!r}")
    w = values if side == "right" else values[:, ::-1]
    if order == 1:
        return (w[:, -1] - w[:, -2]) / domain.dx
    if order == 2:
        return (3.0 * w[:, -1] - 4.0 * w[:, -2] + w[:, -3]) / (2.0 * domain.dx)
    raise ValueError("flux order must be 1 or 2")


def leapfrog_solve(data: WaveData, q: Potential, domain: DomainConfig, cfl_safety: float = 0.9,
                   start: str = "taylor", sides: tuple[str, ...] | None = None, flux_order: int = 1):
    """Explicit second-order solve of d_tt w - d_xx w + q w = h.

    Parameters
    ----------
    start : {"taylor", "euler"}
        ``"taylor"`` uses w(dt) = w0 + dt w1 + dt^2/2 (d_xx w0 - q w0 + h(0));
        ``"euler"`` uses w(dt) = w0 + dt w1, the start that is dual to the
        forward-difference velocity pairing used by the control functional.
    sides : tuple of str, optional
        Sides on which to return flux traces; defaults to the observed sides.
    flux_order : int
        Stencil order of the returned traces (see ``boundary_flux``).

    Returns
    -------
    (SpaceTimeField, dict[str, FluxTrace])
    """
    d = domain
    if d.dt > cfl_safety * d.dx:
        raise CFLError(f"dt/dx = {d.dt / d.dx:.4f} exceeds cfl_safety = {cfl_safety}")
    if start not in ("taylor", "euler"):
        raise ValueError(f"unknown start {start!r}")
    nt = d.nt
    qg = q.grid(d)
    h = data.source
    if h is not None:
        _check_grid(h, d)
    w = np.zeros(d.shape)
    w[:, 0] = data.boundary("left", nt + 1)
    w[:, -1] = data.boundary("right", nt + 1)
    w[0, 1:-1] = data.init_pos[1:-1]
    w0 = w[0].copy()
    w0[0], w0[-1] = data.init_pos[0], data.init_pos[-1]
    step1 = w0[1:-1] + d.dt * data.init_vel[1:-1]
    if start == "taylor":
        acc = (w0[2:] - 2.0 * w0[1:-1] + w0[:-2]) / d.dx**2 - qg[0, 1:-1] * w0[1:-1]
        if h is not None:
            acc = acc + h[0, 1:-1]
        step1 = step1 + 0.5 * d.dt**2 * acc
    w[1, 1:-1] = step1
    dt2, idx2 = d.dt**2, 1.0 / d.dx**2
    for j in range(1, nt):
        cur = w[j]
        acc = (cur[2:] - 2.0 * cur[1:-1] + cur[:-2]) * idx2 - qg[j, 1:-1] * cur[1:-1]
        if h is not None:
            acc += h[j, 1:-1]
        w[j + 1, 1:-1] = 2.0 * cur[1:-1] - w[j - 1, 1:-1] + dt2 * acc
        if not np.all(np.abs(w[j + 1]) <= BLOWUP):
            raise BlowUpError(f"solution exceeded {BLOWUP:g} at time level {j + 1}")
    fluxes = {side: FluxTrace(side, boundary_flux(w, d, side, flux_order), d.dt)
              for side in (d.sides if sides is None else sides)}
    return SpaceTimeField(w, d), fluxes


def time_derivative_trace(f: FluxTrace) -> FluxTrace:
    """Time derivative of a trace: centered inside, one-sided at the two ends."""
    if f.values.size < 3:
        raise ValueError("trace needs at least 3 samples")
    return FluxTrace(f.side, np.gradient(f.values, f.dt), f.dt, f.units + "/time")


def discrete_energy(w: np.ndarray, domain: DomainConfig) -> np.ndarray:
    """Unweighted energy 1/2 sum (d_t w)^2 + 1/2 sum (d_x w)^2 per time level."""
    wt = np.gradient(w, domain.dt, axis=0)
    wx = np.diff(w, axis=1) / domain.dx
    return 0.5 * np.sum(wt[:, 1:-1] ** 2, axis=1) * domain.dx + 0.5 * np.sum(wx**2, axis=1) * domain.dx
