"""Space-time grid, Carleman weights and weighted quadrature.

The grid covers ``[x_lo, x_hi] x [t_lo, t_hi]`` with ``nx`` interior spatial
points and ``nt`` time steps.  Every grid array has shape ``(nt + 1, nx + 2)``,
time along the first axis and space along the second (x fastest in memory).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

SIDES = {"left": ("left",), "right": ("right",), "both": ("left", "right")}

# Natural-log span of the float64 exponent range, from the smallest subnormal
# up to the largest finite value.
EXPONENT_SPAN = math.log(np.finfo(np.float64).max) - math.log(
    np.finfo(np.float64).smallest_subnormal
)


class ParameterRangeError(ValueError):
    """Raised when weight parameters exceed what float64 can represent."""


class GeometryError(ValueError):
    """Raised when a configuration fails the geometric/time conditions."""


@dataclass(frozen=True)
class DomainConfig:
    """Uniform grid on an interval times a time window.

    ``gamma0`` is the observed part of the boundary: ``"left"``, ``"right"``
    or ``"both"``.
    """

    x_lo: float = 0.0
    x_hi: float = 1.0
    nx: int = 100
    t_lo: float = -2.0
    t_hi: float = 2.0
    nt: int = 500
    gamma0: str = "right"

    def __post_init__(self):
        g = str(self.gamma0).lower()
        if g not in SIDES:
            raise ValueError(f"gamma0 must be one of {sorted(SIDES)}, got {self.gamma0!r}")
        object.__setattr__(self, "gamma0", g)
        if not self.x_lo < self.x_hi:
            raise ValueError("x_lo must be smaller than x_hi")
        if not self.t_lo < self.t_hi:
            raise ValueError("t_lo must be smaller than t_hi")
        if int(self.nx) < 2 or int(self.nt) < 2:
            raise ValueError("nx and nt must both be at least 2")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "nt", int(self.nt))

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx + 1)

    @property
    def dt(self) -> float:
        return (self.t_hi - self.t_lo) / self.nt

    @property
    def T(self) -> float:
        """Final time; the window is (-T, T) for control and (0, T) for inversion."""
        return self.t_hi

    @property
    def x(self) -> np.ndarray:
        return self.x_lo + self.dx * np.arange(self.nx + 2)

    @property
    def t(self) -> np.ndarray:
        return self.t_lo + self.dt * np.arange(self.nt + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt + 1, self.nx + 2)

    @property
    def sides(self) -> tuple[str, ...]:
        return SIDES[self.gamma0]

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, T)`` arrays of grid shape."""
        return np.meshgrid(self.x, self.t)

    def time_index(self, t: float) -> int:
        """Index of the grid time closest to ``t``."""
        if not self.t_lo - 1e-12 <= t <= self.t_hi + 1e-12:
            raise ValueError(f"time {t} outside [{self.t_lo}, {self.t_hi}]")
        return int(round((t - self.t_lo) / self.dt))

    def cfl_number(self) -> float:
        return self.dt / self.dx


@dataclass(frozen=True)
class CarlemanParams:
    """Scalar parameters of the Carleman weight.

    ``c0=None`` requests the automatic constant that pins ``min psi = 1``.
    """

    x0: float = -0.3
    beta: float = 0.75
    lam: float = 0.3
    s: float = 80.0
    c0: float | None = None
    alpha: float = 1.0
    eta: float = 0.1
    eps: float = 0.05
    m: float = 1.0

    def with_s(self, s: float) -> "CarlemanParams":
        return replace(self, s=float(s))


def sup_distance(domain: DomainConfig, x0: float) -> float:
    """sup over the domain of |x - x0|."""
    return max(abs(domain.x_lo - x0), abs(domain.x_hi - x0))


def alpha_interval(beta: float, n: int = 1) -> tuple[float, float]:
    """Open interval of admissible conjugation exponents."""
    return 2.0 * beta / (beta + n), 2.0 / (beta + n)


def auto_c0(domain: DomainConfig, x0: float, beta: float) -> float:
    """Constant making the minimum of psi over the grid rectangle equal to 1."""
    dist = np.abs(domain.x - x0)
    tmax = max(abs(domain.t_lo), abs(domain.t_hi))
    # the grid contains both endpoints in x and t, so this is exact on the grid
    return 1.0 - (dist.min() ** 2 - beta * tmax**2)


def _psi(domain: DomainConfig, params: CarlemanParams, c0: float) -> np.ndarray:
    X, Tt = domain.mesh()
    return (X - params.x0) ** 2 - params.beta * Tt**2 + c0


@dataclass
class Condition:
    name: str
    holds: bool
    margin: float
    detail: str = ""


@dataclass
class ValidityReport:
    conditions: list[Condition] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return all(c.holds for c in self.conditions)

    def failed(self) -> list[Condition]:
        return [c for c in self.conditions if not c.holds]

    def as_text(self) -> str:
        lines = []
        for c in self.conditions:
            flag = "ok  " if c.holds else "FAIL"
            lines.append(f"{flag} {c.name:<18} margin={c.margin:.17g}  {c.detail}")
        lines.append(f"valid = {self.valid}")
        return "\n".join(lines) + "\n"


def validate_geometry(domain: DomainConfig, params: CarlemanParams) -> ValidityReport:
    """Check the geometric, time and parameter conditions.

    Every check is reported with a signed margin (positive means satisfied
    with room to spare).  Never raises.
    """
    x0, beta, T = params.x0, params.beta, domain.T
    sup = sup_distance(domain, x0)
    rep = ValidityReport()

    ranges = [0 < beta < 1, params.lam > 0, params.s > 0, params.m >= 0]
    rep.conditions.append(
        Condition("parameter_ranges", all(ranges), min(beta, 1 - beta, params.lam, params.s),
                  "beta in (0,1), lambda > 0, s > 0, m >= 0")
    )
    outside = max(domain.x_lo - x0, x0 - domain.x_hi)
    rep.conditions.append(
        Condition("x0_outside", outside > 0, outside, "distance from x0 to the closed domain")
    )

    # multiplier condition: every endpoint with (x - x0).nu >= 0 is observed
    normals = {"left": (domain.x_lo, -1.0), "right": (domain.x_hi, 1.0)}
    observed = set(domain.sides)
    margin = math.inf
    needed = []
    for side, (xb, nu) in normals.items():
        val = (xb - x0) * nu
        if val >= 0:
            needed.append(side)
        if side not in observed:
            margin = min(margin, -val)
    ok = all(sd in observed for sd in needed)
    rep.conditions.append(
        Condition("gamma_condition", ok, margin, f"sides needing observation: {','.join(needed) or 'none'}")
    )

    rep.conditions.append(
        Condition("time_horizon", T > sup, T - sup, f"T={T:g} vs sup|x-x0|={sup:g}")
    )
    rep.conditions.append(
        Condition(
            "pseudoconvexity",
            sup < beta * T,
            beta * T - sup,
            f"sup|x-x0|={sup:g} < beta*T={beta * T:g}",
        )
    )
    lo, hi = alpha_interval(beta)
    a_margin = min(params.alpha - lo, hi - params.alpha)
    rep.conditions.append(
        Condition("alpha_interval", a_margin > 0, a_margin, f"alpha in ({lo:.6g}, {hi:.6g})")
    )
    cut = (1.0 - params.eps) * (T - params.eta) * beta - sup
    ok_cut = cut >= 0 and 0 < params.eta < T and 0 < params.eps < 1
    rep.conditions.append(
        Condition("cutoff_constraint", ok_cut, cut, "(1-eps)(T-eta)beta >= sup|x-x0|")
    )
    c0 = auto_c0(domain, x0, beta) if params.c0 is None else params.c0
    pmin = float(_psi(domain, params, c0).min())
    rep.conditions.append(
        Condition("psi_lower_bound", pmin >= 1.0 - 1e-12, pmin - 1.0, f"min psi = {pmin:.6g}")
    )
    return rep


@dataclass
class WeightField:
    """Carleman weights sampled on the grid.

    ``weight`` is normalized so that its maximum is exactly 1; ``log_weight``
    keeps the exact exponent, which stays meaningful where ``weight``
    underflows to zero.
    """

    domain: DomainConfig
    s: float
    lam: float
    c0: float
    psi: np.ndarray
    phi: np.ndarray
    log_weight: np.ndarray
    weight: np.ndarray
    phi_max: float
    phi_min: float
    cutoff: np.ndarray

    def inverse_weight(self) -> np.ndarray:
        """Normalized e^{-2 s phi}, scaled so that its maximum is 1."""
        return np.exp(2.0 * self.s * (self.phi_min - self.phi))

    def slice_weight(self, it: int) -> np.ndarray:
        return self.weight[it]


def smoothstep5(u):
    """C^2 quintic blend from 0 (u <= 0) to 1 (u >= 1)."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def cutoff(t, T: float, eta: float) -> np.ndarray:
    """Plateau cut-off: 1 on [-T+eta, T-eta], 0 at +-T, quintic blends between."""
    t = np.asarray(t, dtype=float)
    return smoothstep5((T - np.abs(t)) / eta)


def make_weights(domain: DomainConfig, params: CarlemanParams, auto: bool = True) -> WeightField:
    """Sample psi, phi, the cut-off and the normalized weight on the grid.

    Raises
    ------
    GeometryError
        if the configuration fails ``validate_geometry``.
    ParameterRangeError
        if ``2 s (phi_max - phi_min)`` exceeds the float64 exponent span.
    """
    rep = validate_geometry(domain, params)
    if not rep.valid:
        names = ", ".join(c.name for c in rep.failed())
        raise GeometryError(f"invalid configuration: {names}")
    if auto or params.c0 is None:
        c0 = auto_c0(domain, params.x0, params.beta)
    else:
        c0 = float(params.c0)
    psi = _psi(domain, params, c0)
    phi = np.exp(params.lam * psi)
    phi_max, phi_min = float(phi.max()), float(phi.min())
    span = 2.0 * params.s * (phi_max - phi_min)
    if span > EXPONENT_SPAN:
        raise ParameterRangeError(
            f"2 s (phi_max - phi_min) = {span:.1f} exceeds the float64 exponent span "
            f"{EXPONENT_SPAN:.1f}; lower s or lambda"
        )
    log_weight = 2.0 * params.s * (phi - phi_max)
    weight = np.exp(log_weight)
    return WeightField(
        domain=domain,
        s=float(params.s),
        lam=float(params.lam),
        c0=float(c0),
        psi=psi,
        phi=phi,
        log_weight=log_weight,
        weight=weight,
        phi_max=phi_max,
        phi_min=phi_min,
        cutoff=cutoff(domain.t, domain.T, params.eta),
    )


def unit_weights(domain: DomainConfig) -> WeightField:
    """Weights identically 1 (the s = 0 limit), for unweighted diagnostics."""
    ones = np.ones(domain.shape)
    return WeightField(
        domain=domain, s=0.0, lam=0.0, c0=0.0, psi=ones.copy(), phi=ones.copy(),
        log_weight=np.zeros(domain.shape), weight=ones, phi_max=1.0, phi_min=1.0,
        cutoff=np.ones(domain.nt + 1),
    )


def weighted_l2(values: np.ndarray, weights: WeightField, region: str = "interior",
                t_index: int | None = None) -> float:
    """Rectangle-rule approximation of the integral of weight * values**2.

    ``region`` is ``"interior"`` (interior x, time levels 0..nt-1, cell dx*dt),
    ``"gamma0"`` (boundary columns of the observed sides, cell dt) or
    ``"slice"`` (interior x at time index ``t_index``, cell dx).
    """
    d = weights.domain
    v = np.asarray(values, dtype=float)
    if v.shape != d.shape:
        raise ValueError(f"field shape {v.shape} does not match grid {d.shape}")
    W = weights.weight
    if region == "interior":
        return float(np.sum(W[:-1, 1:-1] * v[:-1, 1:-1] ** 2) * d.dx * d.dt)
    if region == "gamma0":
        total = 0.0
        for side in d.sides:
            col = 0 if side == "left" else d.nx + 1
            total += float(np.sum(W[:-1, col] * v[:-1, col] ** 2) * d.dt)
        return total
    if region == "slice":
        if t_index is None or not 0 <= t_index <= d.nt:
            raise ValueError(f"time index {t_index} out of range 0..{d.nt}")
        return float(np.sum(W[t_index, 1:-1] * v[t_index, 1:-1] ** 2) * d.dx)
    raise ValueError(f"unknown region {region!r}")
