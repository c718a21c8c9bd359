import numpy as np
import pytest

from wavelab.domain_weights import CarlemanParams, DomainConfig
from wavelab.inversion import (
    InverseData,
    InverseProblemSetup,
    algorithm1_step,
    generate_measurement,
    minimizer_stability,
    refine,
    relative_weighted_error,
    run_algorithm1,
    stability_constant,
    truncate,
    weighted_error_sq,
)
from wavelab.wave_ops import Potential

D = DomainConfig(nx=30, nt=80, t_lo=0.0, t_hi=2.0)
P = CarlemanParams(lam=0.2, s=40)


def Q(x):
    return np.sin(2 * np.pi * x)


def setup(q=Q, data=None, **kw):
    data = data or InverseData()
    meas = generate_measurement(D, data, q, fine_factor=1)
    return InverseProblemSetup(D, P, data, meas, true_q=Potential(q(D.x)), **kw)


def test_truncate_examples():
    assert truncate(np.array([1.5]), 2.0)[0] == 1.5
    assert truncate(np.array([3.0]), 2.0)[0] == 2.0
    assert truncate(np.array([-5.0]), 2.0)[0] == -2.0
    rng = np.random.default_rng(0)
    a, b = 4 * rng.standard_normal(100), 4 * rng.standard_normal(100)
    assert np.all(np.abs(truncate(a, 2.0) - truncate(b, 2.0)) <= np.abs(a - b))
    assert isinstance(truncate(Potential(a), 1.0), Potential)
    with pytest.raises(ValueError):
        truncate(a, -1.0)


def test_refine_contains_coarse_nodes():
    f = refine(D, 2)
    assert np.allclose(f.x[::2], D.x)
    assert np.allclose(f.t[::2], D.t)


def test_affine_steady_state_flux():
    # w = 2 + x solves the problem with Q = 0 and the default data
    meas = generate_measurement(D, InverseData(), lambda x: 0.0 * x, fine_factor=1)
    assert np.allclose(meas["right"].values, 1.0, rtol=0, atol=1e-10)


def test_fine_and_same_grid_measurements_agree_to_grid_order():
    m1 = generate_measurement(D, InverseData(), Q, fine_factor=1)["right"].values
    m2 = generate_measurement(D, InverseData(), Q, fine_factor=2)["right"].values
    assert m1.shape == m2.shape == (D.nt + 1,)
    assert np.max(np.abs(m1 - m2)) <= D.dx
    with pytest.raises(ValueError):
        generate_measurement(D, InverseData(), Q, fine_factor=0)


def test_zero_data_gives_zero_flux():
    zero = InverseData(w0=lambda x: 0.0 * x, bc_left=lambda t: 0.0 * t, bc_right=lambda t: 0.0 * t)
    meas = generate_measurement(D, zero, Q, fine_factor=1)
    assert not np.any(meas["right"].values)


def test_exact_potential_is_a_fixed_point():
    st = setup()
    q1, _, _ = algorithm1_step(st.true_q, st)
    assert np.max(np.abs(q1.values - st.true_q.values)) <= 1e-10


def test_zero_potential_from_zero_start_stays_zero():
    st = setup(q=lambda x: 0.0 * x)
    q1, _, _ = algorithm1_step(Potential.zero(D), st)
    assert np.max(np.abs(q1.values)) <= 1e-10


def test_reconstruction_converges_and_stays_in_ball():
    st = setup()
    rec = run_algorithm1(st, max_iter=6)
    errs = [r.weighted_error_sq for r in rec]
    assert errs[1] < errs[0]
    assert all(r.contraction_ratio < 1 for r in rec[1:])
    assert all(r.qk.max_abs() <= st.m for r in rec)
    assert relative_weighted_error(rec[-1].qk, st) <= 0.05
    assert rec[0].cg_iterations == 0 and np.isnan(rec[0].contraction_ratio)


def test_stop_tolerance_ends_early():
    st = setup()
    rec = run_algorithm1(st, max_iter=10, stop_tol=1e300)
    assert len(rec) == 1


def test_weighted_error_needs_truth():
    st = setup()
    st.true_q = None
    assert np.isnan(weighted_error_sq(Potential.zero(D), st))


def test_alpha_pos_guard():
    with pytest.raises(ValueError):
        setup(data=InverseData(w0=lambda x: 0.5 + x))
    with pytest.raises(ValueError):
        setup(q=lambda x: 2.0 + 0.0 * x)


def test_iterate_outside_ball_is_rejected():
    st = setup()
    with pytest.raises(ValueError):
        algorithm1_step(Potential(np.full(D.nx + 2, 1.5), m=2.0), st)


def test_stability_sides_zero_and_linear():
    q = Potential(0.5 * np.sin(np.pi * D.x))
    rng = np.random.default_rng(1)
    g = rng.standard_normal(D.shape)
    assert stability_constant(q, D, P, np.zeros(D.shape)) == (0.0, 0.0)
    lhs, rhs = stability_constant(q, D, P, g)
    assert lhs > 0 and rhs > 0
    # two minimizers with a common flux datum differ by the minimizer of the source difference
    gb = rng.standard_normal(D.shape)
    mu = {"right": rng.standard_normal(D.nt + 1)}
    la, ra = minimizer_stability(q, D, P, g + gb, gb, mu)
    assert la == pytest.approx(lhs, rel=1e-8)
    assert ra == pytest.approx(rhs, rel=1e-12)
