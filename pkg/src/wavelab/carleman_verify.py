"""Numerical checks of the conjugate-operator identity and the weighted inequalities.

Every inequality is measured as a pair ``(lhs, rhs)`` computed with the
normalized weight ``exp(2 s (phi - phi_max))``; the normalization is common
to both sides, so ``lhs / rhs`` is the exact empirical constant.  Space and
time integrals use the trapezoid rule over all grid nodes, and derivatives
come from second-order ``np.gradient`` (one-sided at the edges), so the
boundary flux and the interior gradient share one discretization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .domain_weights import (
    CarlemanParams,
    DomainConfig,
    WeightField,
    alpha_interval,
    auto_c0,
    make_weights,
)
from .wave_ops import Potential, SpaceTimeField, apply_wave_operator

VARIANTS = ("interval", "half_initial_velocity", "endpoint_minus_t")
MODES = ("analytic", "grid")
STABLE_FACTOR = 2.0


# ---------------------------------------------------------------------------
# analytic test functions

@dataclass(frozen=True)
class Factor:
    """One-variable factor with exact first and second derivatives."""

    name: str
    f: Callable
    d1: Callable
    d2: Callable


def sin_factor(k: float, phase: float = 0.0) -> Factor:
    return Factor(f"sin({k:g}*u+{phase:g})",
                  lambda u: np.sin(k * u + phase),
                  lambda u: k * np.cos(k * u + phase),
                  lambda u: -k * k * np.sin(k * u + phase))


def cos_factor(k: float, phase: float = 0.0) -> Factor:
    return Factor(f"cos({k:g}*u+{phase:g})",
                  lambda u: np.cos(k * u + phase),
                  lambda u: -k * np.sin(k * u + phase),
                  lambda u: -k * k * np.cos(k * u + phase))


def poly_factor(coeffs) -> Factor:
    """Polynomial with coefficients in increasing degree."""
    p = np.polynomial.Polynomial(coeffs)
    dp, ddp = p.deriv(1), p.deriv(2)
    return Factor(f"poly{tuple(float(c) for c in coeffs)}", p, dp, ddp)


@dataclass(frozen=True)
class AnalyticTestFunction:
    """Separable w(x, t) = a(x) b(t) with closed-form derivatives."""

    family_id: str
    fx: Factor
    ft: Factor
    coefficients: tuple = ()

    def w(self, x, t):
        return self.fx.f(x) * self.ft.f(t)

    def w_x(self, x, t):
        return self.fx.d1(x) * self.ft.f(t)

    def w_t(self, x, t):
        return self.fx.f(x) * self.ft.d1(t)

    def w_xx(self, x, t):
        return self.fx.d2(x) * self.ft.f(t)

    def w_tt(self, x, t):
        return self.fx.f(x) * self.ft.d2(t)

    def self_test(self, x, t, h: float = 1e-3) -> float:
        """Max discrepancy between exact derivatives and centered differences (O(h^2))."""
        x, t = np.asarray(x, float), np.asarray(t, float)
        w = self.w
        checks = [
            (w(x + h, t) - w(x - h, t)) / (2 * h) - self.w_x(x, t),
            (w(x, t + h) - w(x, t - h)) / (2 * h) - self.w_t(x, t),
            (w(x + h, t) - 2 * w(x, t) + w(x - h, t)) / h**2 - self.w_xx(x, t),
            (w(x, t + h) - 2 * w(x, t) + w(x, t - h)) / h**2 - self.w_tt(x, t),
        ]
        return float(max(np.max(np.abs(c)) for c in checks))


def zero_function() -> AnalyticTestFunction:
    return AnalyticTestFunction("zero", poly_factor([0.0]), poly_factor([1.0]))


def test_family() -> list[AnalyticTestFunction]:
    """Fixed members mixing sin, cos and polynomial factors."""
    pi = np.pi
    return [
        AnalyticTestFunction("sin(pi x) cos(t)", sin_factor(pi), cos_factor(1.0), (pi, 1.0)),
        AnalyticTestFunction("sin(2 pi x) sin(pi t / 2)", sin_factor(2 * pi), sin_factor(pi / 2),
                             (2 * pi, pi / 2)),
        AnalyticTestFunction("x (1 - x) cos(pi t)", poly_factor([0.0, 1.0, -1.0]), cos_factor(pi),
                             (0.0, 1.0, -1.0, pi)),
        AnalyticTestFunction("sin(3 pi x) (1 + t^2)", sin_factor(3 * pi), poly_factor([1.0, 0.0, 1.0]),
                             (3 * pi, 1.0, 0.0, 1.0)),
        AnalyticTestFunction("cos(pi x / 2) sin(2 t + 0.3)", cos_factor(pi / 2), sin_factor(2.0, 0.3),
                             (pi / 2, 2.0, 0.3)),
        AnalyticTestFunction("(x^3 - 2x) (t - t^3 / 3)", poly_factor([0.0, -2.0, 0.0, 1.0]),
                             poly_factor([0.0, 1.0, 0.0, -1.0 / 3.0]), (-2.0, 1.0, 1.0, -1.0 / 3.0)),
    ]


# ---------------------------------------------------------------------------
# conjugate decomposition

def _psi_derivs(x, t, params: CarlemanParams, c0: float):
    psi = (x - params.x0) ** 2 - params.beta * t**2 + c0
    return psi, 2.0 * (x - params.x0), -2.0 * params.beta * t, 2.0, -2.0 * params.beta


def _check_alpha(params: CarlemanParams):
    lo, hi = alpha_interval(params.beta)
    if not lo < params.alpha < hi:
        raise ValueError(f"alpha = {params.alpha} outside the admissible interval ({lo:.6g}, {hi:.6g})")


def conjugated_operator_exact(w: AnalyticTestFunction, x, t, params: CarlemanParams, c0: float):
    """e^{s phi} box(e^{-s phi} w) by the chain rule on phi = exp(lam psi)."""
    s, lam = params.s, params.lam
    psi, px, pt, pxx, ptt = _psi_derivs(x, t, params, c0)
    phi = np.exp(lam * psi)
    phx, pht = lam * px * phi, lam * pt * phi
    phxx = (lam * pxx + lam**2 * px**2) * phi
    phtt = (lam * ptt + lam**2 * pt**2) * phi
    ww, wx, wt = w.w(x, t), w.w_x(x, t), w.w_t(x, t)
    return (w.w_tt(x, t) - w.w_xx(x, t) - 2.0 * s * (pht * wt - phx * wx)
            - s * (phtt - phxx) * ww + s**2 * (pht**2 - phx**2) * ww)


def decomposition_terms(w: AnalyticTestFunction, x, t, params: CarlemanParams, c0: float):
    """(P1 w, P2 w, R w) from their defining formulas."""
    s, lam, a = params.s, params.lam, params.alpha
    psi, px, pt, pxx, ptt = _psi_derivs(x, t, params, c0)
    phi = np.exp(lam * psi)
    ww, wx, wt = w.w(x, t), w.w_x(x, t), w.w_t(x, t)
    grad2 = pt**2 - px**2
    box_psi = ptt - pxx
    p1 = w.w_tt(x, t) - w.w_xx(x, t) + s**2 * lam**2 * phi**2 * ww * grad2
    p2 = ((a - 1.0) * s * lam * phi * ww * box_psi - s * lam**2 * phi * ww * grad2
          - 2.0 * s * lam * phi * (wt * pt - wx * px))
    r = -a * s * lam * phi * ww * box_psi
    return p1, p2, r


def conjugate_decomposition_residual(w: AnalyticTestFunction, params: CarlemanParams,
                                     mode: str = "analytic", domain: DomainConfig | None = None,
                                     relative: bool = True) -> float:
    """Max residual of the conjugate operator split on a sample grid.

    ``"analytic"`` compares the exact chain-rule expansion with
    ``P1 + P2 + R``.  ``"grid"`` applies the discrete wave operator to
    ``e^{-s phi} w`` sampled on ``domain`` and compares ``e^{s phi}`` times
    the result with the exact value on interior nodes; this residual is
    second order in the mesh size.  With ``relative`` the residual is divided
    by the largest magnitude among the compared terms (1 if they all vanish).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    _check_alpha(params)
    d = domain or DomainConfig(nx=60, nt=120)
    c0 = auto_c0(d, params.x0, params.beta) if params.c0 is None else params.c0
    X, T = d.mesh()
    exact = conjugated_operator_exact(w, X, T, params, c0)
    if mode == "analytic":
        p1, p2, r = decomposition_terms(w, X, T, params, c0)
        res = np.max(np.abs(exact - (p1 + p2 + r)))
        scale = max(np.max(np.abs(p1)), np.max(np.abs(p2)), np.max(np.abs(r)), np.max(np.abs(exact)))
    else:
        phi = np.exp(params.lam * ((X - params.x0) ** 2 - params.beta * T**2 + c0))
        # shift by the max so the sampled field stays representable
        shift = params.s * phi.max()
        v = np.exp(-params.s * phi + shift) * w.w(X, T)
        box = apply_wave_operator(SpaceTimeField(v, d), Potential.zero(d)).values
        approx = np.exp(params.s * phi - shift) * box
        inner = (slice(1, -1), slice(1, -1))
        res = np.max(np.abs(approx[inner] - exact[inner]))
        scale = np.max(np.abs(exact[inner]))
    if not relative:
        return float(res)
    return float(res / scale) if scale > 0 else float(res)


# ---------------------------------------------------------------------------
# quadrature helpers

def trapezoid_weights(n: int, h: float) -> np.ndarray:
    q = np.full(n, h)
    q[0] = q[-1] = 0.5 * h
    return q


def _grads(v: np.ndarray, d: DomainConfig):
    zt = np.gradient(v, d.dt, axis=0, edge_order=2)
    zx = np.gradient(v, d.dx, axis=1, edge_order=2)
    return zt, zx


def _log_integral(log_w: np.ndarray, f: np.ndarray, quad: np.ndarray) -> float:
    """log of sum(exp(log_w) * f * quad) for f >= 0, immune to weight underflow."""
    return float(logsumexp(log_w, b=f * quad))


def _quad_space_time(d: DomainConfig) -> np.ndarray:
    return np.outer(trapezoid_weights(d.nt + 1, d.dt), trapezoid_weights(d.nx + 2, d.dx))


# ---------------------------------------------------------------------------
# inequality sides

@dataclass(frozen=True)
class RatioResult:
    """Both sides of an inequality; unpacks as ``lhs, rhs``.

    ``lhs`` and ``rhs`` use the normalized weight and may underflow to 0;
    the logs keep the exact ratio in that case.
    """

    lhs: float
    rhs: float
    log_lhs: float = -np.inf
    log_rhs: float = -np.inf

    def __iter__(self):
        return iter((self.lhs, self.rhs))

    @property
    def degenerate(self) -> bool:
        return self.log_rhs == -np.inf and self.rhs == 0.0

    @property
    def ratio(self) -> float:
        if self.degenerate:
            return float("nan")
        if np.isfinite(self.log_rhs):
            return float(np.exp(self.log_lhs - self.log_rhs))
        return self.lhs / self.rhs


def _result(log_lhs: float, log_rhs: float) -> RatioResult:
    return RatioResult(float(np.exp(log_lhs)), float(np.exp(log_rhs)), log_lhs, log_rhs)


def _log_observation(v, zx, p: Potential, wf: WeightField, d: DomainConfig, chi_obs: bool) -> float:
    Lz = apply_wave_operator(SpaceTimeField(v, d), p).values
    terms = [_log_integral(wf.log_weight, Lz**2, _quad_space_time(d))]
    qt = trapezoid_weights(d.nt + 1, d.dt)
    chi2 = wf.cutoff**2 if chi_obs else 1.0
    for side in d.sides:
        col = 0 if side == "left" else d.nx + 1
        terms.append(np.log(wf.s) + _log_integral(wf.log_weight[:, col], chi2 * zx[:, col] ** 2, qt))
    return float(logsumexp(terms))


def carleman_ratio(z: SpaceTimeField, p: Potential, params: CarlemanParams,
                   variant: str = "interval", weights: WeightField | None = None,
                   chi_obs: bool = False) -> RatioResult:
    """Both sides of a Carleman inequality for the grid field ``z``.

    Variants
    --------
    ``"interval"``
        weighted H^1 and s^3 L^2 terms on the whole window plus the same
        terms at the initial time, against the weighted residual and flux.
    ``"half_initial_velocity"``
        ``z`` lives on ``(0, T)`` with ``z(0) = 0``; the left side adds
        ``s^{1/2}`` times the weighted initial velocity.
    ``"endpoint_minus_t"``
        only the initial-time terms on the left.

    ``chi_obs`` multiplies the flux term by the squared time cut-off.
    Returns ``(0, 0)`` for ``z = 0`` (``.degenerate`` is then true).
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    d = z.domain
    v = z.values
    if np.any(v[:, 0] != 0) or np.any(v[:, -1] != 0):
        raise ValueError("z must vanish on the spatial boundary")
    if variant == "half_initial_velocity":
        if abs(d.t_lo) > 1e-12:
            raise ValueError("half_initial_velocity needs a grid starting at t = 0")
        if np.max(np.abs(v[0])) > 1e-12 * max(1.0, np.max(np.abs(v))):
            raise ValueError("half_initial_velocity needs z(., 0) = 0")
    if not np.any(v):
        return RatioResult(0.0, 0.0)
    wf = weights if weights is not None else make_weights(d, params)
    s, lw = wf.s, wf.log_weight
    zt, zx = _grads(v, d)
    log_rhs = _log_observation(v, zx, p, wf, d, chi_obs)

    q2, qx = _quad_space_time(d), trapezoid_weights(d.nx + 2, d.dx)
    ls = np.log(s)
    bulk = [ls + _log_integral(lw, zt**2 + zx**2, q2), 3 * ls + _log_integral(lw, v**2, q2)]
    endpoint = [ls + _log_integral(lw[0], zt[0] ** 2 + zx[0] ** 2, qx),
                3 * ls + _log_integral(lw[0], v[0] ** 2, qx)]
    if variant == "interval":
        parts = bulk + endpoint
    elif variant == "endpoint_minus_t":
        parts = endpoint
    else:
        parts = [0.5 * ls + _log_integral(lw[0], zt[0] ** 2, qx)] + bulk
    return _result(float(logsumexp(parts)), log_rhs)


def poincare_ratio(z0: np.ndarray, params: CarlemanParams, t_slice: float = 0.0,
                   domain: DomainConfig | None = None) -> RatioResult:
    """``s^2 int e^{2 s phi~} z0^2`` against ``int e^{2 s phi~} |z0'|^2`` with phi~ = phi(., t_slice)."""
    z0 = np.asarray(z0, dtype=float)
    d = domain or DomainConfig(nx=z0.size - 2)
    if z0.shape != (d.nx + 2,):
        raise ValueError(f"z0 has length {z0.size}, expected {d.nx + 2}")
    if max(abs(z0[0]), abs(z0[-1])) > 1e-12 * max(1.0, np.max(np.abs(z0))):
        raise ValueError("z0 must vanish at both endpoints")
    z0 = z0.copy()
    z0[0] = z0[-1] = 0.0
    if not np.any(z0):
        return RatioResult(0.0, 0.0)
    c0 = auto_c0(d, params.x0, params.beta) if params.c0 is None else params.c0
    phi = np.exp(params.lam * ((d.x - params.x0) ** 2 - params.beta * t_slice**2 + c0))
    lw = 2.0 * params.s * (phi - phi.max())
    zx = np.gradient(z0, d.dx, edge_order=2)
    qx = trapezoid_weights(d.nx + 2, d.dx)
    return _result(2.0 * np.log(params.s) + _log_integral(lw, z0**2, qx), _log_integral(lw, zx**2, qx))


def gradient_lower_bound(domain: DomainConfig, params: CarlemanParams, t_slice: float = 0.0) -> float:
    """min over grid nodes of |d_x phi(., t_slice)| = 2 lam |x - x0| phi."""
    c0 = auto_c0(domain, params.x0, params.beta) if params.c0 is None else params.c0
    x = domain.x
    phi = np.exp(params.lam * ((x - params.x0) ** 2 - params.beta * t_slice**2 + c0))
    return float(np.min(2.0 * params.lam * np.abs(x - params.x0) * phi))


def weighted_energy(z: SpaceTimeField, params: CarlemanParams | None = None,
                    weights: WeightField | None = None) -> np.ndarray:
    """E_s(t) = 1/2 int W(t) (z_t^2 + z_x^2) dx per time level (trapezoid in x).

    Pass ``weights=unit_weights(domain)`` for the unweighted energy.
    """
    d = z.domain
    if weights is None:
        if params is None:
            raise ValueError("give params or weights")
        weights = make_weights(d, params)
    zt, zx = _grads(z.values, d)
    qx = trapezoid_weights(d.nx + 2, d.dx)
    return 0.5 * (weights.weight * (zt**2 + zx**2)) @ qx


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class InequalityReport:
    """Empirical constants of one inequality over an s sweep."""

    name: str
    s_values: list = field(default_factory=list)
    lhs: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    ratios: list | None = None
    log_ratios: list | None = None

    def __post_init__(self):
        if any(v < 0 for v in self.lhs) or any(v < 0 for v in self.rhs):
            raise ValueError("inequality sides must be non-negative")

    @property
    def empirical_M(self) -> list:
        """lhs / rhs, taken from the log-space ratios when available."""
        if self.ratios is not None:
            return list(self.ratios)
        return [a / b if b > 0 else float("nan") for a, b in zip(self.lhs, self.rhs)]

    def log_M(self) -> np.ndarray:
        if self.log_ratios is not None:
            return np.asarray(self.log_ratios, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.empirical_M, dtype=float))

    def spread(self) -> float:
        """max/min of the empirical constant over the upper half of the s sweep.

        Computed from log ratios, so constants below the float range still
        give a finite spread when it is representable.
        """
        lm = self.log_M()
        upper = lm[len(lm) // 2:]
        if upper.size == 0 or not np.all(np.isfinite(upper)):
            return float("inf")
        return float(np.exp(np.max(upper) - np.min(upper)))

    @property
    def stable(self) -> bool:
        return self.spread() <= STABLE_FACTOR

    def rows(self) -> list[dict]:
        return [{"s": s, "lhs": a, "rhs": b, "M": m, "log_M": lm}
                for s, a, b, m, lm in zip(self.s_values, self.lhs, self.rhs, self.empirical_M, self.log_M())]


REPORT_COLUMNS = ("s", "lhs", "rhs", "M", "log_M")


def sweep(name: str, s_values, fn: Callable[[float], tuple[float, float]]) -> InequalityReport:
    """Evaluate ``fn(s) -> (lhs, rhs)`` over increasing ``s_values``."""
    s_values = [float(s) for s in s_values]
    out = [fn(s) for s in s_values]
    ratios = [r.ratio if isinstance(r, RatioResult) else (r[0] / r[1] if r[1] > 0 else float("nan"))
              for r in out]
    logs = [r.log_lhs - r.log_rhs if isinstance(r, RatioResult) and np.isfinite(r.log_rhs)
            else (float(np.log(m)) if m > 0 else (-np.inf if m == 0 else float("nan")))
            for r, m in zip(out, ratios)]
    return InequalityReport(name, s_values, [float(r[0]) for r in map(tuple, out)],
                            [float(r[1]) for r in map(tuple, out)], ratios, logs)


def band_limited_field(domain: DomainConfig, rng: np.random.Generator, modes: int = 8,
                       with_cutoff: bool = True, eta: float = 0.1,
                       time_basis: str = "mixed") -> SpaceTimeField:
    """Random combination of at most ``modes`` products sin(k pi x) cos/sin(l pi t / T).

    Spatial modes vanish at both ends; with ``with_cutoff`` the field is
    multiplied by the plateau cut-off in time.  ``time_basis="sin"`` keeps
    only sine factors, so the field vanishes at ``t = 0``.
    """
    if not 1 <= modes <= 8:
        raise ValueError("modes must be between 1 and 8")
    if time_basis not in ("mixed", "sin"):
        raise ValueError("time_basis must be 'mixed' or 'sin'")
    X, Tt = domain.mesh()
    L = domain.x_hi - domain.x_lo
    Th = max(abs(domain.t_lo), abs(domain.t_hi))
    v = np.zeros(domain.shape)
    for _ in range(modes):
        k = int(rng.integers(1, 4))
        l = int(rng.integers(0, 3))
        amp = rng.standard_normal()
        tp = np.cos if rng.random() < 0.5 else np.sin
        if time_basis == "sin":
            tp, l = np.sin, l + 1
        v += amp * np.sin(k * np.pi * (X - domain.x_lo) / L) * tp(l * np.pi * Tt / Th)
    if with_cutoff:
        from .domain_weights import cutoff

        v *= cutoff(domain.t, Th, eta)[:, None]
    v[:, 0] = v[:, -1] = 0.0
    return SpaceTimeField(v, domain, dirichlet=True)


def random_potential(domain: DomainConfig, rng: np.random.Generator, m: float = 1.0,
                     modes: int = 4) -> Potential:
    """Smooth potential with max |p| equal to ``m``."""
    x = domain.x
    vals = np.zeros_like(x)
    for k in range(1, modes + 1):
        vals += rng.standard_normal() * np.cos(k * np.pi * x) / k
    peak = np.max(np.abs(vals[1:-1]))
    vals = m * vals / peak if peak > 0 else vals
    return Potential(vals, m)
