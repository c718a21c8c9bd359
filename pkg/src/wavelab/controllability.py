"""Exact controls from the Carleman-weighted functional K and the potential-sensitivity study.

Conventions
-----------
The pairing of the target ``(y0, y1)`` with a trajectory ``z`` is::

    sum y0 (z[1] - z[0]) / dt dx - sum grad((-D)^-1 y1) . grad(z[0]) dx

with ``D`` the Dirichlet second-difference matrix.  Summation by parts turns
the second term into ``sum y1 z[0] dx``, which is the linear term handed to
``quadmin``.

With that pairing and residual/flux rows on levels ``1..nt-1``, the
stationarity conditions say that ``Y = W L Z / s`` (levels ``1..nt-1``,
completed by ``Y[0] = y0``) is the leapfrog solution started with
``Y[1] = y0 + dt y1`` and driven by ``U = W_G B Z`` on the observed side, and
that it vanishes at the last two levels.  The closed-loop check therefore
uses the ``"euler"`` start.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .domain_weights import CarlemanParams, DomainConfig, make_weights
from .quadmin import MinimizeReport, QuadProblem, minimize
from .wave_ops import Potential, SpaceTimeField, WaveData, leapfrog_solve


@dataclass
class ControlTarget:
    """Initial state to be driven to rest. Arrays have length ``nx + 2``."""

    y0: np.ndarray
    y1: np.ndarray

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        self.y1 = np.asarray(self.y1, dtype=float)
        if not (np.all(np.isfinite(self.y0)) and np.all(np.isfinite(self.y1))):
            raise ValueError("control target must be finite")

    def scaled(self, c: float) -> "ControlTarget":
        return ControlTarget(c * self.y0, c * self.y1)


@dataclass
class ControlledPair:
    Y: SpaceTimeField
    U: dict
    Z: SpaceTimeField | None
    s: float
    terminal_energy: float
    initial_energy: float
    Y_sim: SpaceTimeField
    report: MinimizeReport = field(repr=False)
    pairing: float = 0.0

    @property
    def trajectory_mismatch(self) -> float:
        """Max difference between the extracted and re-simulated trajectories."""
        return float(np.max(np.abs(self.Y.values - self.Y_sim.values)))


def dirichlet_inverse(v: np.ndarray, dx: float) -> np.ndarray:
    """Solve ``-D u = v`` on interior points with homogeneous Dirichlet ends."""
    n = v.size
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0 / dx**2
    ab[1, :] = 2.0 / dx**2
    ab[2, :-1] = -1.0 / dx**2
    return solve_banded((1, 1), ab, v)


def h_minus1_sq(v: np.ndarray, dx: float) -> float:
    """Discrete H^-1 norm squared of an interior array: <(-D)^-1 v, v> dx."""
    return float(dirichlet_inverse(v, dx) @ v) * dx


def state_energy(pos: np.ndarray, vel: np.ndarray, dx: float) -> float:
    """L^2 x H^-1 energy of a state given on interior points."""
    return float(pos @ pos) * dx + h_minus1_sq(vel, dx)


def dual_pairing(target: ControlTarget, z: SpaceTimeField | np.ndarray, domain: DomainConfig) -> float:
    """Pairing of ``(y0, y1)`` with ``(z(-T), d_t z(-T))``."""
    v = z.values if isinstance(z, SpaceTimeField) else np.asarray(z, dtype=float)
    dx, dt = domain.dx, domain.dt
    zt = (v[1, 1:-1] - v[0, 1:-1]) / dt
    u = np.zeros(domain.nx + 2)
    u[1:-1] = dirichlet_inverse(target.y1[1:-1], dx)
    z0 = v[0].copy()
    z0[0] = z0[-1] = 0.0
    grad_term = np.sum(np.diff(u) * np.diff(z0)) / dx
    return float(np.sum(target.y0[1:-1] * zt) * dx - grad_term)


def pairing_coefficients(target: ControlTarget, domain: DomainConfig) -> np.ndarray:
    """Grid field ``f`` with ``sum f z = dual_pairing(target, z)`` for Dirichlet ``z``."""
    dx, dt = domain.dx, domain.dt
    f = np.zeros(domain.shape)
    y0, y1 = target.y0[1:-1], target.y1[1:-1]
    f[1, 1:-1] = y0 * dx / dt
    f[0, 1:-1] = -y0 * dx / dt - y1 * dx
    return f


def solve_control(target: ControlTarget, p: Potential, domain: DomainConfig, params: CarlemanParams,
                  s: float | None = None, method: str = "direct", tol: float = 1e-10,
                  max_iter: int | None = None, cfl_safety: float = 0.9) -> ControlledPair:
    """Minimize K_{s,p}, extract (Y, U) and verify them in closed loop."""
    if s is not None:
        params = params.with_s(s)
    d = domain
    weights = make_weights(d, params)
    prob = QuadProblem(d, p, weights, linear_term=pairing_coefficients(target, d),
                       constraints="free_endpoints")
    rep = minimize(prob, tol=tol, max_iter=max_iter, method=method)

    Y = rep.weighted_residual / params.s
    Y[0, 1:-1] = target.y0[1:-1]
    U = {side: rep.weighted_flux[side].copy() for side in d.sides}
    for side, col in (("left", 0), ("right", d.nx + 1)):
        if side in U:
            Y[1:-1, col] = U[side][1:-1]
    # last level from one more leapfrog step of the extracted trajectory
    nt = d.nt
    lap = (Y[nt - 1, 2:] - 2.0 * Y[nt - 1, 1:-1] + Y[nt - 1, :-2]) / d.dx**2
    Y[nt, 1:-1] = (2.0 * Y[nt - 1, 1:-1] - Y[nt - 2, 1:-1]
                   + d.dt**2 * (lap - p.grid(d)[nt - 1, 1:-1] * Y[nt - 1, 1:-1]))

    data = WaveData(target.y0, target.y1, bc_left=U.get("left"), bc_right=U.get("right"),
                    check_corners=False)
    sim, _ = leapfrog_solve(data, p, d, cfl_safety=cfl_safety, start="euler")
    end = sim.values[nt, 1:-1]
    vel = (sim.values[nt, 1:-1] - sim.values[nt - 1, 1:-1]) / d.dt
    te = state_energy(end, vel, d.dx)
    e0 = state_energy(target.y0[1:-1], target.y1[1:-1], d.dx)
    Z = rep.minimizer
    pair = dual_pairing(target, Z, d) if Z is not None else float("nan")
    Ysim = SpaceTimeField(sim.values, d)
    return ControlledPair(Y=SpaceTimeField(Y, d), U=U, Z=Z, s=float(params.s), terminal_energy=te,
                          initial_energy=e0, Y_sim=Ysim, report=rep, pairing=pair)


def sensitivity_terms(a: ControlledPair, b: ControlledPair, domain: DomainConfig,
                      params: CarlemanParams) -> tuple[float, float]:
    """Numerator and denominator of the weighted relative difference of two controlled pairs.

    Both use the inverse weight ``exp(-2 s phi)`` normalized to maximum 1;
    the normalization cancels in the ratio.
    """
    d = domain
    wf = make_weights(d, params.with_s(a.s))
    inv = wf.inverse_weight()
    cell = d.dx * d.dt
    Ya, Yb = a.Y.values[:-1, 1:-1], b.Y.values[:-1, 1:-1]
    Wi = inv[:-1, 1:-1]
    num = a.s * float(np.sum(Wi * (Ya - Yb) ** 2)) * cell
    den = a.s * float(np.sum(Wi * (Ya**2 + Yb**2))) * cell
    for side in d.sides:
        col = 0 if side == "left" else d.nx + 1
        wg = inv[:-1, col]
        Ua, Ub = a.U[side][:-1], b.U[side][:-1]
        num += float(np.sum(wg * (Ua - Ub) ** 2)) * d.dt
        den += float(np.sum(wg * (Ua**2 + Ub**2))) * d.dt
    return num, den


SENSITIVITY_COLUMNS = ("s", "ratio", "numerator", "denominator", "cg_iters_a", "cg_iters_b",
                       "terminal_energy_a", "terminal_energy_b")


def sensitivity_row(target: ControlTarget, pa: Potential, pb: Potential, s: float,
                    domain: DomainConfig, params: CarlemanParams, **solve_kw) -> dict:
    pr = params.with_s(s)
    a = solve_control(target, pa, domain, pr, **solve_kw)
    b = solve_control(target, pb, domain, pr, **solve_kw)
    num, den = sensitivity_terms(a, b, domain, pr)
    return {
        "s": float(s), "ratio": num / den if den > 0 else 0.0, "numerator": num, "denominator": den,
        "cg_iters_a": a.report.cg_iterations, "cg_iters_b": b.report.cg_iterations,
        "terminal_energy_a": a.terminal_energy, "terminal_energy_b": b.terminal_energy,
    }


def sensitivity_experiment(target: ControlTarget, pa: Potential, pb: Potential, s_list,
                           domain: DomainConfig, params: CarlemanParams, workers: int = 1,
                           **solve_kw) -> list[dict]:
    """Weighted relative difference of the controlled pairs for two potentials, per s.

    A failed row is reported with ``ratio = nan`` and does not abort the table.
    """
    s_list = [float(s) for s in s_list]
    if any(b <= a for a, b in zip(s_list, s_list[1:])):
        raise ValueError("s_list must be increasing")
    for pot in (pa, pb):
        if not pot.in_ball():
            raise ValueError("potential exceeds its bound m")
    args = [(target, pa, pb, s, domain, params) for s in s_list]
    rows = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(sensitivity_row, *a, **solve_kw) for a in args]
            results = []
            for f in futs:
                try:
                    results.append(f.result())
                except (FloatingPointError, ValueError, ArithmeticError):
                    results.append(None)
    else:
        results = []
        for a in args:
            try:
                results.append(sensitivity_row(*a, **solve_kw))
            except (FloatingPointError, ValueError, ArithmeticError):
                results.append(None)
    for s, r in zip(s_list, results):
        if r is None:
            r = {k: float("nan") for k in SENSITIVITY_COLUMNS}
            r["s"] = s
        rows.append(r)
    return rows


def loglog_slope(s_values, ratios) -> float:
    """Least-squares slope of log(ratio) against log(s)."""
    return float(np.polyfit(np.log(s_values), np.log(ratios), 1)[0])
