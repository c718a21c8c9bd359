"""Reconstruction of a potential from boundary flux by iterated Carleman-weighted least squares.

Each step solves the forward problem with the current potential, turns the
flux mismatch into a time-differentiated boundary datum, minimizes the
weighted functional with zero initial state and reads the correction from
the initial velocity of the minimizer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain_weights import CarlemanParams, DomainConfig, WeightField, make_weights
from .quadmin import QuadProblem, minimize
from .wave_ops import FluxTrace, Potential, WaveData, leapfrog_solve, time_derivative_trace

Profile = Callable[[np.ndarray], np.ndarray]


def _const(c: float) -> Profile:
    return lambda arr: np.full(np.shape(arr), float(c))


@dataclass
class InverseData:
    """Analytic description of the direct problem data.

    Profiles are vectorized callables: ``w0(x)``, ``w1(x)``, ``h(x, t)``,
    ``bc_left(t)`` and ``bc_right(t)``.  Keeping them analytic lets the
    measurement be synthesized on a finer grid.
    """

    w0: Profile = field(default=lambda x: 2.0 + x)
    w1: Profile = field(default=lambda x: 0.0 * x)
    h: Callable | None = None
    bc_left: Profile = field(default_factory=lambda: _const(2.0))
    bc_right: Profile = field(default_factory=lambda: _const(3.0))

    def on(self, domain: DomainConfig) -> WaveData:
        x, t = domain.x, domain.t
        src = None
        if self.h is not None:
            X, T = domain.mesh()
            src = np.broadcast_to(self.h(X, T), domain.shape).astype(float)
        return WaveData(self.w0(x), self.w1(x), src, self.bc_left(t), self.bc_right(t))


def truncate(q: Potential | np.ndarray, m: float):
    """Pointwise clamp to ``[-m, m]``."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if isinstance(q, Potential):
        return Potential(np.clip(q.values, -m, m), m)
    return np.clip(q, -m, m)


def refine(domain: DomainConfig, factor: int) -> DomainConfig:
    """Grid with spacing divided by ``factor`` whose nodes contain the original ones."""
    return DomainConfig(domain.x_lo, domain.x_hi, factor * (domain.nx + 1) - 1,
                        domain.t_lo, domain.t_hi, factor * domain.nt, domain.gamma0)


def generate_measurement(domain: DomainConfig, data: InverseData, true_q: Profile,
                         fine_factor: int = 2, cfl_safety: float = 0.9) -> dict[str, FluxTrace]:
    """Flux of the direct problem with the true potential, restricted to the working time grid.

    ``fine_factor = 1`` is the same-grid mode.
    """
    if fine_factor < 1:
        raise ValueError("fine_factor must be >= 1")
    fine = refine(domain, fine_factor)
    qf = Potential(true_q(fine.x))
    _, flux = leapfrog_solve(data.on(fine), qf, fine, cfl_safety=cfl_safety)
    return {side: FluxTrace(side, tr.values[::fine_factor].copy(), domain.dt)
            for side, tr in flux.items()}


@dataclass
class InverseProblemSetup:
    domain: DomainConfig
    params: CarlemanParams
    data: InverseData
    measured_flux: dict
    m: float = 1.0
    alpha_pos: float = 1.0
    true_q: Potential | None = None
    method: str = "direct"
    tol: float = 1e-10
    max_cg: int | None = None
    regularization: float = 0.0
    cfl_safety: float = 0.9

    def __post_init__(self):
        w0 = self.data.w0(self.domain.x)
        if np.min(np.abs(w0)) < self.alpha_pos:
            raise ValueError(f"min |w0| = {np.min(np.abs(w0)):.6g} is below alpha_pos = {self.alpha_pos}")
        if self.true_q is not None and self.true_q.max_abs() > self.m:
            raise ValueError("true potential exceeds the bound m")
        self._wave = self.data.on(self.domain)
        self._weights = make_weights(self.domain, self.params)

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def weights(self) -> WeightField:
        return self._weights

    @property
    def wave_data(self) -> WaveData:
        return self._wave


@dataclass
class IterationRecord:
    k: int
    qk: Potential
    weighted_error_sq: float
    contraction_ratio: float
    cg_iterations: int
    flux_misfit: float


def initial_weight(setup: InverseProblemSetup) -> np.ndarray:
    """Normalized e^{2 s phi(x, 0)} on interior points."""
    it0 = setup.domain.time_index(0.0)
    return setup.weights.weight[it0, 1:-1]


def weighted_error_sq(q: Potential, setup: InverseProblemSetup) -> float:
    """Integral of e^{2 s phi(0)} (q - Q)^2 with normalized weights (oracle only)."""
    if setup.true_q is None:
        return float("nan")
    e = q.values[1:-1] - setup.true_q.values[1:-1]
    return float(np.sum(initial_weight(setup) * e**2) * setup.domain.dx)


def relative_weighted_error(q: Potential, setup: InverseProblemSetup) -> float:
    ref = float(np.sum(initial_weight(setup) * setup.true_q.values[1:-1] ** 2) * setup.domain.dx)
    return float(np.sqrt(weighted_error_sq(q, setup) / ref))


def flux_misfit(flux: dict, setup: InverseProblemSetup) -> float:
    """Weighted boundary misfit between a computed flux and the measurement."""
    d, W = setup.domain, setup.weights.weight
    total = 0.0
    for side, tr in flux.items():
        col = 0 if side == "left" else d.nx + 1
        diff = tr.values - setup.measured_flux[side].values
        total += float(np.sum(W[:-1, col] * diff[:-1] ** 2)) * d.dt
    return total


def _forward(qk: Potential, setup: InverseProblemSetup):
    _, flux = leapfrog_solve(setup.wave_data, qk, setup.domain, cfl_safety=setup.cfl_safety)
    return flux


def algorithm1_step(qk: Potential, setup: InverseProblemSetup, flux: dict | None = None):
    """One reconstruction step.

    Returns ``(q_next, cg_iterations, flux_of_qk)``.
    """
    d = setup.domain
    if qk.max_abs() > setup.m * (1 + 1e-12):
        raise ValueError("iterate left the admissible ball")
    w0 = setup.wave_data.init_pos
    if np.min(np.abs(w0[1:-1])) < setup.alpha_pos:
        raise ValueError("w0 is too close to zero for the update")
    if flux is None:
        flux = _forward(qk, setup)
    mu = {side: time_derivative_trace(flux[side] - setup.measured_flux[side]).values
          for side in d.sides}
    prob = QuadProblem(d, qk, setup.weights, flux_target=mu, constraints="zero_initial",
                       regularization=setup.regularization)
    rep = minimize(prob, tol=setup.tol, max_iter=setup.max_cg, method=setup.method)
    # forward difference at t = 0 with Z(., 0) = 0, undoing the conjugation
    it1 = 1
    scale = np.exp(-setup.s * (setup.weights.phi[it1, 1:-1] - setup.weights.phi_max))
    dtZ0 = rep.conjugated[it1, 1:-1] * scale / d.dt
    q_new = qk.values.copy()
    q_new[1:-1] = qk.values[1:-1] + dtZ0 / w0[1:-1]
    q_new[0] = q_new[-1] = 0.0
    return truncate(Potential(q_new, setup.m), setup.m), rep.cg_iterations, flux


def run_algorithm1(setup: InverseProblemSetup, max_iter: int = 20, stop_tol: float = 0.0,
                   q0: Potential | None = None) -> list[IterationRecord]:
    """Iterate from ``q0`` (default zero) until the flux misfit drops below ``stop_tol``.

    Record ``k`` describes ``q^k``; its ``cg_iterations`` are those spent
    computing ``q^k`` (0 for the initial guess).
    """
    d = setup.domain
    q = Potential.zero(d, setup.m) if q0 is None else Potential(q0.values.copy(), setup.m)
    records = []
    iters = 0
    prev = None
    flux = _forward(q, setup)
    for k in range(max_iter + 1):
        err = weighted_error_sq(q, setup)
        ratio = err / prev if prev not in (None, 0.0) and np.isfinite(err) else float("nan")
        mis = flux_misfit(flux, setup)
        records.append(IterationRecord(k, q, err, ratio, iters, mis))
        prev = err
        if mis <= stop_tol or k == max_iter:
            break
        q, iters, _ = algorithm1_step(q, setup, flux)
        flux = _forward(q, setup)
    return records


ITERATION_COLUMNS = ("k", "weighted_error_sq", "contraction_ratio", "flux_misfit", "cg_iterations")


def _initial_velocity_sq(rep, wf: WeightField, d: DomainConfig, s: float) -> np.ndarray:
    """e^{2 s (phi(0) - phi_max)} (d_t Z(0))^2 per interior node, from the conjugated field."""
    it0 = d.time_index(0.0)
    expo = 2.0 * s * (wf.phi[it0, 1:-1] - wf.phi[it0 + 1, 1:-1])
    vel = rep.conjugated[it0 + 1, 1:-1] / d.dt
    return np.exp(expo) * vel**2


def minimizer_stability(q: Potential, domain: DomainConfig, params: CarlemanParams, ga: np.ndarray,
                        gb: np.ndarray, mu: dict | None = None, method: str = "direct") -> tuple[float, float]:
    """Both sides of the minimizer stability bound for two sources with the same flux datum.

    Minimizes the functional with ``(mu, ga)`` and ``(mu, gb)`` separately and
    returns ``(lhs, rhs)``: lhs = s^{1/2} int e^{2 s phi(0)} |d_t Z^a(0) - d_t Z^b(0)|^2,
    rhs = int int e^{2 s phi} |ga - gb|^2 (normalized weights on both sides).
    """
    d, s = domain, params.s
    wf = make_weights(d, params)
    reps = [minimize(QuadProblem(d, q, wf, source_target=g, flux_target=mu, constraints="zero_initial"),
                     method=method) for g in (ga, gb)]
    it0 = d.time_index(0.0)
    expo = s * (wf.phi[it0, 1:-1] - wf.phi[it0 + 1, 1:-1])
    dvel = (reps[0].conjugated[it0 + 1, 1:-1] - reps[1].conjugated[it0 + 1, 1:-1]) / d.dt
    lhs = np.sqrt(s) * float(np.sum(np.exp(2.0 * expo) * dvel**2)) * d.dx
    dg = ga - gb
    rhs = float(np.sum(wf.weight[1:-1, 1:-1] * dg[1:-1, 1:-1] ** 2)) * d.dx * d.dt
    return lhs, rhs


def stability_constant(q: Potential, domain: DomainConfig, params: CarlemanParams, g: np.ndarray,
                       method: str = "direct") -> tuple[float, float]:
    """Both sides of the minimizer stability bound for a source difference ``g``.

    Returns ``(lhs, rhs)`` with lhs = s^{1/2} int e^{2 s phi(0)} |d_t Z(0)|^2 and
    rhs = int int e^{2 s phi} g^2, where Z minimizes the functional with zero
    flux datum and source ``g`` (the difference of two minimizers by linearity).
    """
    d = domain
    wf = make_weights(d, params)
    prob = QuadProblem(d, q, wf, source_target=g, flux_target=None, constraints="zero_initial")
    rep = minimize(prob, method=method)
    # formed from the conjugated field so nothing overflows
    lhs = np.sqrt(params.s) * float(np.sum(_initial_velocity_sq(rep, wf, d, params.s))) * d.dx
    rhs = float(np.sum(wf.weight[1:-1, 1:-1] * g[1:-1, 1:-1] ** 2)) * d.dx * d.dt
    return lhs, rhs
