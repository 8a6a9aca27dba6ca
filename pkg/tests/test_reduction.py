import numpy as np
import pytest

from thinpde.expressions import base_vars
from thinpde.presets import _scalar, reference_problem, rich_problem
from thinpde.reduction import (
    DegenerateThicknessError,
    aux_fields,
    estimate_limit_bounds,
    evaluate_operator_g,
    reduce_problem,
    representation_check,
)


def test_aux_fields_vanish_for_trivial_data(reference):
    b_aux, c_aux = aux_fields(reference)
    for x in np.linspace(0, 1, 9):
        assert np.allclose(b_aux([x]), 0.0, atol=1e-12)
        assert c_aux([x]) == pytest.approx(0.0, abs=1e-12)


def test_aux_source_from_gamma0_beta0():
    # gamma0 = beta0 = x1 with k, l = 0 gives c_aux = -x1
    p = reference_problem(gamma0="x1")
    p.bdata.beta0 = _scalar("x1", base_vars(1), {"x1": "1"})
    _, c_aux = aux_fields(p)
    for x in np.linspace(0, 1, 7):
        assert c_aux([x]) == pytest.approx(-x, abs=1e-9)


def test_aux_source_thickness_average():
    # g+ = 1, g- = 0, l+ = 1, l- = 5, gamma0 = 0: c_aux = (1*1 + 0*5)/1 = 1
    p = reference_problem()
    bv = base_vars(1)
    p.geom.g_minus = _scalar("0", bv)
    p.geom.g_plus = _scalar("1", bv)
    p.bdata.l_plus = _scalar("1", bv)
    p.bdata.l_minus = _scalar("5", bv)
    _, c_aux = aux_fields(p)
    assert c_aux([0.5]) == pytest.approx(1.0)


def test_degenerate_thickness():
    p = reference_problem()
    bv = base_vars(1)
    p.geom.g_minus = _scalar("1", bv)  # same as g_plus
    _, c_aux = aux_fields(p)
    with pytest.raises(DegenerateThicknessError):
        c_aux([0.5])


def test_reduce_trivial_collapse(reference):
    # gamma0 = beta0 = k = l = 0: the reduced fields are the y = 0 traces
    lp = reduce_problem(reference)
    for x in np.linspace(0, 1, 7):
        z = np.array([x, 0.0])
        e = reference.coeffs.entry("1", "1")
        assert lp.a_tilde("1", "1", [x])[0, 0] == pytest.approx(e.diffusion_at(z)[0, 0])
        assert lp.b_tilde("1", "1", [x])[0] == pytest.approx(e.drift_at(z)[0])
        assert lp.c_tilde("1", "1", [x]) == pytest.approx(e.c_at(z))
        assert lp.f_tilde("1", "1", [x]) == pytest.approx(e.f_at(z))


def test_reduce_constant_gamma0():
    # gamma0 = 1, A = I2: A~ = (1, -1) I (1, -1)^T = 2
    p = reference_problem(gamma0="1")
    lp = reduce_problem(p)
    assert lp.a_tilde("1", "1", [0.3])[0, 0] == pytest.approx(2.0)


def test_b_tilde_fd_oracle():
    # G is affine in p, so differencing G in p recovers -b~; for gamma0 = x1
    # with A = I2 and b = 0 the drift reduces to A_{22} b_aux = x1
    p = reference_problem(gamma0="x1")
    p.bdata.gamma0.components[0].expr.register_derivative("x1", "1")
    lp = reduce_problem(p)
    delta = 1e-6
    for x in np.linspace(0.1, 0.9, 5):
        base = evaluate_operator_g(lp, np.zeros((1, 1)), np.zeros(1), 0.0, [x]).value
        bumped = evaluate_operator_g(lp, np.zeros((1, 1)), np.array([delta]), 0.0, [x]).value
        b_fd = -(bumped - base) / delta
        assert b_fd == pytest.approx(lp.b_tilde("1", "1", [x])[0], abs=1e-6)
        assert lp.b_tilde("1", "1", [x])[0] == pytest.approx(x, abs=1e-9)


def test_sigma_tilde_factorization(rich):
    lp = reduce_problem(rich)
    for lam, mu in rich.control_pairs():
        for x in np.linspace(0, 1, 9):
            s = lp.sigma_tilde(lam, mu, [x])
            a = lp.a_tilde(lam, mu, [x])
            assert np.allclose(s.T @ s, a, atol=1e-10)
            assert np.linalg.eigvalsh(a).min() >= -1e-10
            assert lp.c_tilde(lam, mu, [x]) >= 0.0


def test_representation_identity_analytic(rich):
    rep = representation_check(rich, samples=1000, seed=0)
    assert rep.passed
    assert rep.max_abs_diff <= 1e-8


def test_representation_identity_fd_derivatives():
    # wipe the registered derivatives: both sides share the FD values, so
    # the identity still holds far below the widened 1e-4 tolerance
    p = rich_problem()
    for comp in p.bdata.gamma0.components:
        comp.expr._derivs.clear()
    p.bdata.beta0.expr._derivs.clear()
    rep = representation_check(p, samples=300, seed=4, tolerance=1e-4)
    assert rep.passed


def test_representation_identity_degenerate(reference):
    rep = representation_check(reference, samples=200, seed=2, tolerance=1e-9)
    assert rep.passed


def test_operator_g_examples(reference):
    lp = reduce_problem(reference)
    out = evaluate_operator_g(lp, np.array([[2.0]]), np.zeros(1), 0.0, [0.5])
    f = lp.f_tilde("1", "1", [0.5])
    assert out.value == pytest.approx(-2.0 - f)
    p = reference_problem(c="1", f="0")
    lp2 = reduce_problem(p)
    out = evaluate_operator_g(lp2, np.zeros((1, 1)), np.zeros(1), -3.0, [0.5])
    assert out.value == pytest.approx(-3.0)


def test_g_monotone_and_elliptic(rich):
    lp = reduce_problem(rich)
    rng = np.random.default_rng(5)
    for _ in range(30):
        X = np.array([[rng.uniform(-1, 1)]])
        p = rng.uniform(-1, 1, size=1)
        x = [rng.uniform(0, 1)]
        r1, r2 = sorted(rng.uniform(-1, 1, size=2))
        assert evaluate_operator_g(lp, X, p, r1, x).value <= evaluate_operator_g(lp, X, p, r2, x).value + 1e-12
        t = rng.uniform(0, 1)
        assert (
            evaluate_operator_g(lp, X, p, 0.0, x).value
            >= evaluate_operator_g(lp, X + t * np.eye(1), p, 0.0, x).value - 1e-12
        )


def test_subadditivity(rich):
    # G(a1) - G(a2) <= sup over controls of the homogeneous part at a1 - a2
    lp = reduce_problem(rich)
    rng = np.random.default_rng(6)
    for _ in range(40):
        X1, X2 = (np.array([[rng.uniform(-1, 1)]]) for _ in range(2))
        p1, p2 = (rng.uniform(-1, 1, size=1) for _ in range(2))
        r1, r2 = (float(rng.uniform(-1, 1)) for _ in range(2))
        x = [rng.uniform(0, 1)]
        lhs = (
            evaluate_operator_g(lp, X1, p1, r1, x).value
            - evaluate_operator_g(lp, X2, p2, r2, x).value
        )
        rhs = max(
            lp.homogeneous_value(lam, mu, X1 - X2, p1 - p2, r1 - r2, x)
            for lam, mu in lp.control_pairs()
        )
        assert lhs <= rhs + 1e-10


def test_limit_bounds_report(rich):
    lp = reduce_problem(rich)
    rep = estimate_limit_bounds(lp)
    assert np.isfinite(rep.sup_bound) and rep.sup_bound > 0
    assert np.isfinite(rep.lipschitz_sigma_b)
    assert "limit coefficient bounds" in rep.format()


def test_dirichlet_trace(rich):
    lp = reduce_problem(rich)
    assert lp.dirichlet_trace([0.0]) == pytest.approx(0.0)
    assert lp.dirichlet_trace([1.0]) == pytest.approx(1.0)  # beta = x1 at y = 0
