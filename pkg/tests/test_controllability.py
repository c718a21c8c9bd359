import numpy as np
import pytest

from wavelab.controllability import (
    ControlTarget,
    dirichlet_inverse,
    dual_pairing,
    h_minus1_sq,
    loglog_slope,
    pairing_coefficients,
    sensitivity_experiment,
    sensitivity_terms,
    solve_control,
)
from wavelab.domain_weights import CarlemanParams, DomainConfig
from wavelab.wave_ops import Potential

D = DomainConfig(nx=30, nt=150)
P = CarlemanParams(lam=0.02)


def sine_target(d=D):
    return ControlTarget(np.sin(np.pi * d.x), np.zeros(d.nx + 2))


def test_dual_pairing_zero():
    d = DomainConfig(nx=50, nt=100)
    z = np.zeros(d.shape)
    assert dual_pairing(ControlTarget(np.zeros(52), np.zeros(52)), z, d) == 0.0


def test_dual_pairing_velocity_term():
    d = DomainConfig(nx=199, nt=400)
    z = np.zeros(d.shape)
    z[1] = d.dt * np.sin(np.pi * d.x)
    y0 = np.ones(d.nx + 2)
    assert dual_pairing(ControlTarget(y0, np.zeros(d.nx + 2)), z, d) == pytest.approx(2 / np.pi, abs=1e-3)


def test_dual_pairing_position_term():
    d = DomainConfig(nx=199, nt=400)
    z = np.zeros(d.shape)
    z[0] = z[1] = np.sin(np.pi * d.x)
    y1 = np.pi**2 * np.sin(np.pi * d.x)
    val = dual_pairing(ControlTarget(np.zeros(d.nx + 2), y1), z, d)
    assert val == pytest.approx(-np.pi**2 / 2, abs=1e-2)


def test_pairing_coefficients_match_pairing():
    rng = np.random.default_rng(0)
    tg = ControlTarget(rng.standard_normal(D.nx + 2), rng.standard_normal(D.nx + 2))
    z = rng.standard_normal(D.shape)
    z[:, 0] = z[:, -1] = 0
    f = pairing_coefficients(tg, D)
    assert np.sum(f * z) == pytest.approx(dual_pairing(tg, z, D), rel=1e-10)


def test_h_minus1_of_sine():
    # (-d_xx)^-1 sin(pi x) = sin(pi x) / pi^2, so the norm is 1 / (2 pi^2)
    d = DomainConfig(nx=199)
    v = np.sin(np.pi * d.x[1:-1])
    assert h_minus1_sq(v, d.dx) == pytest.approx(0.5 / np.pi**2, rel=1e-4)
    assert np.allclose(dirichlet_inverse(np.zeros(5), 0.1), 0.0)


def test_zero_target_gives_zero_control():
    tg = ControlTarget(np.zeros(D.nx + 2), np.zeros(D.nx + 2))
    pair = solve_control(tg, Potential.zero(D), D, P, s=40)
    assert not np.any(pair.Y.values)
    assert not np.any(pair.U["right"])
    assert pair.terminal_energy == 0.0


@pytest.mark.parametrize("s", [40.0, 80.0])
def test_control_drives_state_to_rest_with_duality(s):
    pair = solve_control(sine_target(), Potential.zero(D), D, P, s=s)
    assert pair.terminal_energy <= 1e-4 * pair.initial_energy
    assert abs(pair.pairing + pair.report.obs_norm_sq) <= 1e-6 * pair.report.obs_norm_sq
    assert pair.trajectory_mismatch <= 1e-6 * np.max(np.abs(pair.Y.values))


def test_control_with_potential():
    p = Potential(0.5 * np.sin(2 * np.pi * D.x))
    pair = solve_control(sine_target(), p, D, P, s=40)
    assert pair.terminal_energy <= 1e-4 * pair.initial_energy


def test_control_linear_in_target():
    rng = np.random.default_rng(3)
    t1 = sine_target()
    y1 = rng.standard_normal(D.nx + 2)
    y1[0] = y1[-1] = 0
    t2 = ControlTarget(np.zeros(D.nx + 2), y1)
    a, b = 2.0, -0.5
    comb = ControlTarget(a * t1.y0 + b * t2.y0, a * t1.y1 + b * t2.y1)
    p = Potential.zero(D)
    u1 = solve_control(t1, p, D, P, s=40).U["right"]
    u2 = solve_control(t2, p, D, P, s=40).U["right"]
    u12 = solve_control(comb, p, D, P, s=40).U["right"]
    assert np.allclose(u12, a * u1 + b * u2, rtol=1e-8, atol=1e-8 * np.max(np.abs(u12)))


def test_control_only_on_observed_side():
    pair = solve_control(sine_target(), Potential.zero(D), D, P, s=40)
    assert set(pair.U) == {"right"}
    # the left end keeps its homogeneous Dirichlet value
    assert not np.any(pair.Y_sim.values[:, 0])


def test_sensitivity_identical_potentials():
    p = Potential(0.3 * np.sin(np.pi * D.x))
    rows = sensitivity_experiment(sine_target(), p, p, [40], D, P)
    assert rows[0]["ratio"] == 0.0


def test_sensitivity_swap_symmetry():
    pa = Potential.zero(D)
    pb = Potential(0.5 * np.sin(2 * np.pi * D.x))
    tg = sine_target()
    a = solve_control(tg, pa, D, P, s=40)
    b = solve_control(tg, pb, D, P, s=40)
    n1, d1 = sensitivity_terms(a, b, D, P.with_s(40))
    n2, d2 = sensitivity_terms(b, a, D, P.with_s(40))
    assert n1 / d1 == pytest.approx(n2 / d2, rel=1e-12)


def test_sensitivity_decreases_with_s():
    pb = Potential(0.5 * np.sin(2 * np.pi * D.x))
    s = [40, 80, 160]
    rows = sensitivity_experiment(sine_target(), Potential.zero(D), pb, s, D, P)
    r = [row["ratio"] for row in rows]
    assert r[0] > r[1] > r[2] > 0
    assert loglog_slope(s, r) <= -1.0


def test_sensitivity_rejects_bad_input():
    p = Potential.zero(D)
    with pytest.raises(ValueError):
        sensitivity_experiment(sine_target(), p, p, [80, 40], D, P)
    with pytest.raises(ValueError):
        sensitivity_experiment(sine_target(), p, Potential(np.full(D.nx + 2, 2.0), m=1.0), [40], D, P)


def test_loglog_slope_exact():
    s = np.array([10.0, 20.0, 40.0])
    assert loglog_slope(s, 3.0 * s**-1.5) == pytest.approx(-1.5)


def test_target_rejects_nonfinite():
    with pytest.raises(ValueError):
        ControlTarget(np.array([0.0, np.nan]), np.zeros(2))
