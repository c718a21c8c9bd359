import numpy as np
import pytest

from wavelab.domain_weights import (
    EXPONENT_SPAN,
    CarlemanParams,
    DomainConfig,
    GeometryError,
    ParameterRangeError,
    alpha_interval,
    auto_c0,
    cutoff,
    make_weights,
    smoothstep5,
    unit_weights,
    validate_geometry,
    weighted_l2,
)

D = DomainConfig()
P = CarlemanParams()


def _cond(rep, name):
    return next(c for c in rep.conditions if c.name == name)


def test_domain_spacing_and_shape():
    d = DomainConfig(nx=9, nt=20)
    assert d.dx == pytest.approx(0.1)
    assert d.dt == pytest.approx(0.2)
    assert d.shape == (21, 11)
    assert d.x[0] == 0.0 and d.x[-1] == 1.0


@pytest.mark.parametrize("kw", [dict(x_lo=1.0, x_hi=0.0), dict(t_lo=1.0, t_hi=0.0), dict(nx=1), dict(nt=1),
                                dict(gamma0="top")])
def test_domain_rejects_bad_fields(kw):
    with pytest.raises(ValueError):
        DomainConfig(**kw)


def test_default_geometry_is_valid_with_closed_form_margins():
    rep = validate_geometry(D, P)
    assert rep.valid
    # sup|x - x0| = 1.3 against beta T = 1.5 and T = 2
    assert _cond(rep, "pseudoconvexity").margin == pytest.approx(0.2)
    assert _cond(rep, "time_horizon").margin == pytest.approx(0.7)
    # right end needs observation, the left one has (x - x0).nu = -0.3
    assert "right" in _cond(rep, "gamma_condition").detail
    assert _cond(rep, "gamma_condition").margin == pytest.approx(0.3)
    assert "valid = True" in rep.as_text()


def test_beta_06_violates_pseudoconvexity():
    rep = validate_geometry(D, CarlemanParams(beta=0.6))
    assert not rep.valid
    cond = _cond(rep, "pseudoconvexity")
    assert not cond.holds
    assert cond.margin == pytest.approx(1.2 - 1.3)


def test_x0_inside_domain_is_invalid():
    rep = validate_geometry(D, CarlemanParams(x0=0.5))
    assert not _cond(rep, "x0_outside").holds


def test_left_only_observation_fails_gamma_condition():
    rep = validate_geometry(DomainConfig(gamma0="left"), P)
    assert not _cond(rep, "gamma_condition").holds


def test_alpha_interval_and_violation():
    lo, hi = alpha_interval(0.75)
    assert lo == pytest.approx(1.5 / 1.75)
    assert hi == pytest.approx(2 / 1.75)
    assert not validate_geometry(D, CarlemanParams(alpha=1.2)).valid


def test_auto_c0_closed_form():
    # min(|x - x0|^2 - beta t^2) = 0.09 - 3 = -2.91
    assert auto_c0(D, -0.3, 0.75) == pytest.approx(3.91)
    wf = make_weights(D, P)
    assert wf.c0 == pytest.approx(3.91)
    ix, it0 = D.nx + 1, D.time_index(0.0)
    assert wf.psi[it0, ix] == pytest.approx(5.6)
    assert wf.psi.min() == pytest.approx(1.0)


def test_weight_invariants():
    wf = make_weights(D, P)
    assert np.all(wf.psi >= 1.0 - 1e-12)
    assert np.all(wf.phi >= np.exp(P.lam) * (1 - 1e-12))
    assert np.all(wf.weight <= 1.0) and np.all(wf.weight >= 0.0)
    assert np.all(wf.weight[wf.phi == wf.phi.max()] == 1.0)
    assert np.array_equal(wf.log_weight, 2 * P.s * (wf.phi - wf.phi_max))


def test_weight_is_one_at_argmax_for_any_s():
    for s in (1.0, 17.0, 80.0):
        wf = make_weights(D, P.with_s(s))
        assert wf.weight.flat[np.argmax(wf.phi)] == 1.0


def test_psi_time_symmetric_and_phi_max_at_t0():
    wf = make_weights(D, P)
    assert np.allclose(wf.psi, wf.psi[::-1])
    it0 = D.time_index(0.0)
    assert np.all(wf.phi <= wf.phi[it0][None, :])


def test_psi_gradient_bounded_below():
    # |d_x psi| = 2 |x - x0| >= 2 dist(x0, domain) = 0.6
    grad = 2 * np.abs(D.x - P.x0)
    assert grad.min() == pytest.approx(0.6)


def test_cutoff_properties():
    t = np.linspace(-2, 2, 4001)
    chi = cutoff(t, 2.0, 0.1)
    assert chi.min() >= 0 and chi.max() <= 1
    assert chi[0] == 0 and chi[-1] == 0
    assert np.all(chi[np.abs(t) <= 1.9] == 1.0)
    # C^2 blend: S'(0) = S'(1) = S''(0) = S''(1) = 0
    h = 1e-4
    for u in (0.0, 1.0):
        d1 = (smoothstep5(u + h) - smoothstep5(u - h)) / (2 * h)
        d2 = (smoothstep5(u + h) - 2 * smoothstep5(u) + smoothstep5(u - h)) / h**2
        assert abs(d1) < 1e-6 and abs(d2) < 1e-2


def test_overflow_guard():
    wf = make_weights(D, P.with_s(80))
    span = 2 * 80 * (wf.phi_max - wf.phi_min)
    s_bad = 1.01 * EXPONENT_SPAN / span * 80
    with pytest.raises(ParameterRangeError):
        make_weights(D, P.with_s(s_bad))


def test_make_weights_refuses_invalid_geometry():
    with pytest.raises(GeometryError):
        make_weights(D, CarlemanParams(beta=0.6))


def test_weight_normalization_cancels_in_ratios():
    wf = make_weights(D, P)
    shifted = np.exp(wf.log_weight - 3.0)
    f = np.sin(np.pi * D.mesh()[0])
    a = np.sum(wf.weight * f**2) / np.sum(wf.weight)
    b = np.sum(shifted * f**2) / np.sum(shifted)
    assert a == pytest.approx(b, rel=1e-12)


def test_weighted_l2_examples():
    d = DomainConfig(nx=200, nt=200, t_lo=0.0, t_hi=1.0)
    uw = unit_weights(d)
    assert weighted_l2(np.zeros(d.shape), uw) == 0.0
    ones = np.ones(d.shape)
    assert weighted_l2(ones, uw) == pytest.approx(1.0, abs=2.0 / 200)
    X, _ = d.mesh()
    assert weighted_l2(np.sin(np.pi * X), uw, "slice", t_index=5) == pytest.approx(0.5, abs=1e-3)
    assert weighted_l2(ones, uw, "gamma0") == pytest.approx(1.0)
    with pytest.raises(ValueError):
        weighted_l2(ones, uw, "slice", t_index=d.nt + 1)
    with pytest.raises(ValueError):
        weighted_l2(ones[:-1], uw)
