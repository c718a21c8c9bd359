"""Weighted space-time least squares for the wave operator.

The functionals handled here have the common form::

    1/(2s) sum W (L z - g)^2 dx dt + 1/2 sum W_G (B z - mu)^2 dt + sum f z

where ``W`` is the normalized Carleman weight, ``L`` the discrete wave
operator, ``B`` the one-sided boundary flux on the observed sides and ``f`` an
optional linear term.  Residual and flux rows live on time levels
``1..nt-1``.

The unknowns are handled in conjugated form ``w = exp(s (phi - phi_max)) z``.
Matrix entries then carry only ``exp(s (phi_row - phi_col))`` between grid
neighbours, which keeps the assembled system finite for any weight range
that ``make_weights`` accepts.  This is a diagonal change of variables, so
Jacobi-preconditioned CG produces the same iterates as on the raw normal
equations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain_weights import DomainConfig, WeightField
from .wave_ops import Potential, SpaceTimeField, apply_wave_operator, boundary_flux

CONSTRAINTS = ("free_endpoints", "zero_initial")
METHODS = ("cg", "direct")
# relative normal-equation residual above which a direct solve is flagged
DIRECT_ACCEPT = 1e-6


@dataclass
class QuadProblem:
    """Data of one weighted quadratic functional.

    ``flux_target`` maps a side name to a length ``nt + 1`` array.
    ``linear_term`` is a grid-shaped coefficient field ``f`` adding ``sum f z``.
    """

    domain: DomainConfig
    q: Potential
    weights: WeightField
    source_target: np.ndarray | None = None
    flux_target: dict[str, np.ndarray] | None = None
    linear_term: np.ndarray | None = None
    constraints: str = "free_endpoints"
    regularization: float = 0.0

    def __post_init__(self):
        if self.constraints not in CONSTRAINTS:
            raise ValueError(f"constraints must be one of {CONSTRAINTS}")
        if self.weights.domain != self.domain:
            raise ValueError("weights live on a different grid")
        if self.s <= 0:
            raise ValueError("s must be positive")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")
        for arr in (self.source_target, self.linear_term):
            if arr is not None and np.shape(arr) != self.domain.shape:
                raise ValueError("target field does not match the grid")

    @property
    def s(self) -> float:
        return self.weights.s

    @property
    def first_level(self) -> int:
        return 1 if self.constraints == "zero_initial" else 0

    @property
    def n_unknowns(self) -> int:
        return (self.domain.nt + 1 - self.first_level) * self.domain.nx


@dataclass
class MinimizeReport:
    """Minimizer and diagnostics.

    ``minimizer`` is ``None`` when the unweighted field is not representable
    in float64; ``conjugated`` always holds ``exp(s (phi - phi_max)) Z``.
    ``weighted_residual`` is ``W (L Z - g)`` and ``weighted_flux[side]`` is
    ``W_G (B Z - mu)``, both zero outside time levels ``1..nt-1``.
    """

    minimizer: SpaceTimeField | None
    conjugated: np.ndarray
    cg_iterations: int
    final_relative_residual: float
    functional_value: float
    obs_norm_sq: float
    converged: bool
    method: str
    weighted_residual: np.ndarray = field(repr=False, default=None)
    weighted_flux: dict = field(repr=False, default_factory=dict)

    def as_text(self) -> str:
        return "".join(f"{k}: {v!r}\n" for k, v in self.as_row().items())

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}


REPORT_KEYS = ("method", "cg_iterations", "final_relative_residual", "functional_value",
               "obs_norm_sq", "converged")


def pack(prob: QuadProblem, values: np.ndarray) -> np.ndarray:
    """Grid field -> unknown vector (drops constrained entries)."""
    return np.asarray(values, dtype=float)[prob.first_level:, 1:-1].ravel().copy()


def unpack(prob: QuadProblem, vec: np.ndarray) -> np.ndarray:
    """Unknown vector -> grid field with zeros in constrained entries."""
    d = prob.domain
    out = np.zeros(d.shape)
    out[prob.first_level:, 1:-1] = np.asarray(vec).reshape(d.nt + 1 - prob.first_level, d.nx)
    return out


def _col_scale(prob: QuadProblem) -> np.ndarray:
    """log of exp(s (phi - phi_max)) per unknown: w = exp(scale) * z."""
    w = prob.weights
    return pack(prob, prob.s * (w.phi - w.phi_max))


@dataclass
class _System:
    M: sp.csr_matrix
    b: np.ndarray
    lin: np.ndarray
    n_res: int
    n_flux: int
    flux_rows: dict


def _assemble(prob: QuadProblem) -> _System:
    d, s = prob.domain, prob.s
    phi = prob.weights.phi
    nx, nt = d.nx, d.nt
    first = prob.first_level
    qg = prob.q.grid(d)
    sq = np.sqrt(d.dx * d.dt / s)
    half_w = np.exp(0.5 * prob.weights.log_weight)

    J, I = np.meshgrid(np.arange(1, nt), np.arange(1, nx + 1), indexing="ij")
    row = ((J - 1) * nx + (I - 1)).ravel()
    Jr, Ir = J.ravel(), I.ravel()

    def stencil_entries(row_offset, scale, include_mass):
        rows, cols, vals = [], [], []
        it2, ix2 = 1.0 / d.dt**2, 1.0 / d.dx**2
        centre = -2.0 * it2 + (2.0 * ix2 if include_mass else 0.0)
        offsets = [(1, 0, np.full(Jr.size, it2)), (-1, 0, np.full(Jr.size, it2))]
        if include_mass:
            offsets += [(0, 0, centre + qg[Jr, Ir]), (0, 1, np.full(Jr.size, -ix2)),
                        (0, -1, np.full(Jr.size, -ix2))]
        else:
            offsets += [(0, 0, np.full(Jr.size, centre))]
        for dj, di, coef in offsets:
            jc, ic = Jr + dj, Ir + di
            ok = (ic >= 1) & (ic <= nx) & (jc >= first)
            rows.append(row_offset + row[ok])
            cols.append((jc[ok] - first) * nx + (ic[ok] - 1))
            vals.append(scale * coef[ok] * np.exp(s * (phi[Jr[ok], Ir[ok]] - phi[jc[ok], ic[ok]])))
        return rows, cols, vals

    rows, cols, vals = stencil_entries(0, sq, True)
    n_res = (nt - 1) * nx
    b_parts = [np.zeros(n_res)]
    if prob.source_target is not None:
        g = np.asarray(prob.source_target, dtype=float)
        b_parts[0] = sq * (half_w[1:nt, 1:-1] * g[1:nt, 1:-1]).ravel()

    flux_rows = {}
    r0 = n_res
    jj = np.arange(1, nt)
    for side in d.sides:
        bcol, ncol = (nx + 1, nx) if side == "right" else (0, 1)
        rows.append(r0 + jj - 1)
        cols.append((jj - first) * nx + (ncol - 1))
        vals.append(np.sqrt(d.dt) * (-1.0 / d.dx) * np.exp(s * (phi[jj, bcol] - phi[jj, ncol])))
        bf = np.zeros(nt - 1)
        if prob.flux_target is not None and side in prob.flux_target:
            mu = np.asarray(prob.flux_target[side], dtype=float)
            bf = np.sqrt(d.dt) * half_w[jj, bcol] * mu[jj]
        b_parts.append(bf)
        flux_rows[side] = (r0, bcol)
        r0 += nt - 1
    n_flux = r0 - n_res

    if prob.regularization > 0:
        r_rows, r_cols, r_vals = stencil_entries(r0, np.sqrt(prob.regularization) * sq, False)
        rows += r_rows
        cols += r_cols
        vals += r_vals
        b_parts.append(np.zeros(n_res))
        r0 += n_res

    M = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(r0, prob.n_unknowns),
    )
    lin = np.zeros(prob.n_unknowns)
    if prob.linear_term is not None:
        with np.errstate(over="ignore"):
            lin = pack(prob, prob.linear_term) * np.exp(-_col_scale(prob))
        if not np.all(np.isfinite(lin)):
            raise FloatingPointError("linear term overflows in conjugated variables; lower s or lambda")
    return _System(M, np.concatenate(b_parts), lin, n_res, n_flux, flux_rows)


def assemble_normal_operator(prob: QuadProblem) -> spla.LinearOperator:
    """Normal operator ``s^-1 L* W L + B* W_G B (+ reg)`` on the unknown vector of z."""
    sysm = _assemble(prob)
    A = (sysm.M.T @ sysm.M).tocsr()
    S = np.exp(_col_scale(prob))
    return spla.LinearOperator(A.shape, matvec=lambda v: S * (A @ (S * np.ravel(v))), dtype=float)


def normal_matrix(prob: QuadProblem) -> tuple[sp.csc_matrix, np.ndarray]:
    """Conjugated normal matrix and right-hand side (for diagnostics)."""
    sysm = _assemble(prob)
    return (sysm.M.T @ sysm.M).tocsc(), sysm.M.T @ sysm.b - sysm.lin


def minimize(prob: QuadProblem, tol: float = 1e-10, max_iter: int | None = None,
             method: str = "cg", x0: np.ndarray | None = None) -> MinimizeReport:
    """Minimize the functional of ``prob``.

    ``method="cg"`` runs conjugate gradient with Jacobi preconditioning on
    the normal equations; ``method="direct"`` solves the equivalent augmented
    least-squares system with a sparse LU.  ``x0`` is an optional warm start given as a grid field.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    n = prob.n_unknowns
    if max_iter is None:
        max_iter = max(5000, int(20 * np.sqrt(n)))
    sysm = _assemble(prob)
    M = sysm.M
    A = (M.T @ M).tocsr()
    rhs = M.T @ sysm.b - sysm.lin
    D = np.sqrt(A.diagonal())
    if np.any(D == 0):
        raise FloatingPointError("normal operator has a zero diagonal entry")
    rhs_s = rhs / D
    As = sp.diags(1.0 / D) @ A @ sp.diags(1.0 / D)
    bnorm = np.linalg.norm(rhs_s)

    iters = 0
    converged = True
    if bnorm == 0.0:
        y = np.zeros(n)
    elif method == "direct":
        # augmented system [[I, M D^-1], [D^-1 M^T, 0]]: same minimizer as the
        # normal equations without squaring the condition number
        Ms = M @ sp.diags(1.0 / D)
        m = M.shape[0]
        K = sp.bmat([[sp.identity(m), Ms], [Ms.T, None]], format="csc")
        sol = spla.splu(K).solve(np.concatenate([sysm.b, sysm.lin / D]))
        y = sol[m:]
    else:
        y0 = None
        if x0 is not None:
            y0 = pack(prob, x0) * np.exp(_col_scale(prob)) * D

        def count(_):
            nonlocal iters
            iters += 1

        y, info = spla.cg(As, rhs_s, x0=y0, rtol=tol, atol=0.0, maxiter=max_iter, callback=count)
        converged = info == 0
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("NaN or overflow in the minimizer")
    rel = float(np.linalg.norm(rhs_s - As @ y) / bnorm) if bnorm > 0 else 0.0
    if method == "direct":
        converged = rel <= DIRECT_ACCEPT
    w = y / D

    d = prob.domain
    r = M @ w
    mis = r - sysm.b
    value = 0.5 * float(mis @ mis) + float(sysm.lin @ w)
    obs = float(r[: sysm.n_res + sysm.n_flux] @ r[: sysm.n_res + sysm.n_flux])

    half_w = np.exp(0.5 * prob.weights.log_weight)
    sq = np.sqrt(d.dx * d.dt / prob.s)
    wres = np.zeros(d.shape)
    wres[1:-1, 1:-1] = half_w[1:-1, 1:-1] * mis[: sysm.n_res].reshape(d.nt - 1, d.nx) / sq
    wflux = {}
    for side, (r0, bcol) in sysm.flux_rows.items():
        tr = np.zeros(d.nt + 1)
        tr[1:-1] = half_w[1:-1, bcol] * mis[r0:r0 + d.nt - 1] / np.sqrt(d.dt)
        wflux[side] = tr

    conj = unpack(prob, w)
    with np.errstate(over="ignore", invalid="ignore"):
        z = unpack(prob, w * np.exp(-_col_scale(prob)))
    minimizer = SpaceTimeField(z, d, dirichlet=True) if np.all(np.isfinite(z)) else None
    return MinimizeReport(
        minimizer=minimizer, conjugated=conj, cg_iterations=iters,
        final_relative_residual=rel, functional_value=value, obs_norm_sq=obs,
        converged=bool(converged), method=method, weighted_residual=wres, weighted_flux=wflux,
    )


def obs_norm(z: SpaceTimeField | np.ndarray, prob: QuadProblem) -> float:
    """Squared observation norm ``s^-1 sum W (L z)^2 dx dt + sum W_G (B z)^2 dt``.

    Uses the normalized weights and the same time levels as the functional.
    """
    d = prob.domain
    vals = z.values if isinstance(z, SpaceTimeField) else np.asarray(z, dtype=float)
    Lz = apply_wave_operator(SpaceTimeField(vals, d), prob.q).values
    W = prob.weights.weight
    total = float(np.sum(W[1:-1, 1:-1] * Lz[1:-1, 1:-1] ** 2)) * d.dx * d.dt / prob.s
    for side in d.sides:
        col = d.nx + 1 if side == "right" else 0
        fl = boundary_flux(vals, d, side)
        total += float(np.sum(W[1:-1, col] * fl[1:-1] ** 2)) * d.dt
    return total


def functional_value(z: SpaceTimeField | np.ndarray, prob: QuadProblem) -> float:
    """Direct evaluation of the functional at a grid field (normalized weights)."""
    d = prob.domain
    vals = z.values if isinstance(z, SpaceTimeField) else np.asarray(z, dtype=float)
    Lz = apply_wave_operator(SpaceTimeField(vals, d), prob.q).values
    if prob.source_target is not None:
        Lz = Lz - prob.source_target
    W = prob.weights.weight
    total = 0.5 * float(np.sum(W[1:-1, 1:-1] * Lz[1:-1, 1:-1] ** 2)) * d.dx * d.dt / prob.s
    for side in d.sides:
        col = d.nx + 1 if side == "right" else 0
        fl = boundary_flux(vals, d, side)
        if prob.flux_target is not None and side in prob.flux_target:
            fl = fl - prob.flux_target[side]
        total += 0.5 * float(np.sum(W[1:-1, col] * fl[1:-1] ** 2)) * d.dt
    if prob.regularization > 0:
        D2 = (vals[2:, 1:-1] - 2.0 * vals[1:-1, 1:-1] + vals[:-2, 1:-1]) / d.dt**2
        total += 0.5 * prob.regularization * float(np.sum(W[1:-1, 1:-1] * D2**2)) * d.dx * d.dt / prob.s
    if prob.linear_term is not None:
        total += float(np.sum(prob.linear_term[prob.first_level:, 1:-1] * vals[prob.first_level:, 1:-1]))
    return total
