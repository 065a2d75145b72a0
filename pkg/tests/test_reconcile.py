import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from picof.gp import Dataset, GpHyperparams, SurrogateBundle, fit
from picof.physics import PhysicsSystem, toy_balance
from picof.reconcile import (
    CorrectionMode,
    ReconcileError,
    WeightMode,
    WeightPolicy,
    compute_weights,
    objective_h,
    reconcile,
    solve_affine,
    solve_gauss_newton,
)

ADD = CorrectionMode.ADDITIVE
MUL = CorrectionMode.MULTIPLICATIVE


def affine_system(B, b0, affine=False):
    q, m = B.shape
    return PhysicsSystem(1, m, q, lambda x, p: B @ p + b0 + x[0], lambda x, p: B, affine=affine)


def lstsq_oracle(B, b0, x, mu, w, scales):
    """Stacked least squares [B*s; sqrt(w)] u = [-r0; 0] solved with lstsq."""
    r0 = B @ mu + b0 + x
    A = np.vstack([B * scales, np.diag(np.sqrt(w))])
    rhs = np.concatenate([-r0, np.zeros(len(w))])
    u = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return u * scales


def toy_case(a):
    # residual 140*0 - p1 - p2 with mu = (-a, 0): r = a - c1 - c2
    return [0.0], np.array([-a, 0.0])


# -- weights ---------------------------------------------------------------

def test_sigma_scaled_weights_from_toy_study():
    w = compute_weights(WeightPolicy(WeightMode.SIGMA_SCALED, (0.5, 0.008)), [2.0, 10.0])
    assert w == pytest.approx([1.0, 0.08])


def test_constant_weights():
    assert compute_weights(WeightPolicy("constant", (1.0, 1.0)), [5.0, 0.0]) == pytest.approx([1, 1])


def test_inverse_weights():
    assert compute_weights(WeightPolicy("sigma_inverse", (1.0, 1.0)), [0.5, 2.0]) == pytest.approx([2, 0.5])


def test_weights_floor_and_errors():
    w = compute_weights(WeightPolicy("sigma_scaled", (1.0,)), [0.0, 3.0])
    assert w[0] == 1e-8 and w[1] == 3.0
    with pytest.raises(ReconcileError):
        WeightPolicy("constant", (1.0, -1.0))
    with pytest.raises(ReconcileError):
        compute_weights(WeightPolicy("constant", (1.0, 1.0)), [-1.0, 1.0])
    with pytest.raises(ReconcileError):
        compute_weights(WeightPolicy("constant", (1.0, 1.0, 1.0)), [1.0, 1.0])


# -- closed form -----------------------------------------------------------

def test_closed_form_equal_weights():
    x, mu = toy_case(1.0)
    res = solve_affine(x, mu, toy_balance(), ADD, [1.0, 1.0])
    # stationarity: s = a / (1 + 1/w1 + 1/w2) = 1/3 and c_j = s / w_j
    assert res.c_star == pytest.approx([1 / 3, 1 / 3], abs=1e-12)
    assert abs(res.residual_after[0]) == pytest.approx(1 / 3, abs=1e-12)
    assert res.gradient_norm <= 1e-10


def test_closed_form_matches_numerical_minimum():
    x, mu = toy_case(1.0)
    sys = toy_balance()
    res = solve_affine(x, mu, sys, ADD, [0.3, 2.0])
    num = minimize(lambda c: objective_h(x, c, mu, sys, ADD, [0.3, 2.0]), [0.0, 0.0],
                   method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 5000})
    assert res.c_star == pytest.approx(num.x, abs=1e-6)


def test_no_correction_when_physics_holds():
    x, mu = toy_case(0.0)
    for w in ([1.0, 1.0], [1e-3, 50.0]):
        res = solve_affine(x, mu, toy_balance(), ADD, w)
        assert np.array_equal(res.c_star, [0.0, 0.0])
        assert res.h_value == 0.0


def test_heavy_weight_pins_channel():
    x, mu = toy_case(1.0)
    res = solve_affine(x, mu, toy_balance(), ADD, [1.0, 1e6])
    s = 1.0 / (1 + 1 + 1e-6)
    assert res.c_star == pytest.approx([s, s / 1e6], abs=1e-12)
    assert abs(res.c_star[1]) < 1e-5 and res.c_star[0] == pytest.approx(0.5, abs=1e-6)


def test_affine_requires_flag():
    B = np.array([[1.0, 2.0]])
    with pytest.raises(ReconcileError):
        solve_affine([0.0], [0.0, 0.0], affine_system(B, np.zeros(1)), ADD, [1.0, 1.0])


def test_nonpositive_weights_rejected():
    with pytest.raises(ReconcileError):
        solve_affine([0.0], [1.0, 0.0], toy_balance(), ADD, [1.0, 0.0])


def test_multiplicative_affine_matches_numerical_minimum():
    sys = toy_balance()
    x, mu, w = [1.0], np.array([60.0, 70.0]), np.array([5.0, 0.5])
    res = solve_affine(x, mu, sys, MUL, w)
    num = minimize(lambda c: objective_h(x, c, mu, sys, MUL, w), [1.0, 1.0],
                   method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 5000})
    assert res.c_star == pytest.approx(num.x, abs=1e-6)
    assert res.p_tilde == pytest.approx(res.c_star * mu)


def test_literal_multiplicative_penalty_centres_at_zero():
    sys = toy_balance()
    x, mu, w = [1.0], np.array([60.0, 70.0]), np.array([1e6, 1e6])
    shifted = solve_affine(x, mu, sys, MUL, w)
    literal = solve_affine(x, mu, sys, MUL, w, literal_penalty=True)
    assert shifted.c_star == pytest.approx([1.0, 1.0], abs=1e-2)
    assert literal.c_star == pytest.approx([0.0, 0.0], abs=1e-2)


# -- Gauss-Newton ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_gauss_newton_matches_closed_form(seed):
    rng = np.random.default_rng(seed)
    m, q = rng.integers(2, 7), rng.integers(1, 4)
    B, b0 = rng.standard_normal((q, m)), rng.standard_normal(q)
    x, mu = rng.standard_normal(1), rng.standard_normal(m)
    w = 10 ** rng.uniform(-3, 3, m)
    scales = 10 ** rng.uniform(-1, 1, m)
    gn = solve_gauss_newton(x, mu, affine_system(B, b0), ADD, w, scales=scales)
    cf = solve_affine(x, mu, affine_system(B, b0, affine=True), ADD, w, scales)
    oracle = lstsq_oracle(B, b0, x, mu, w, scales)
    assert gn.converged
    assert np.max(np.abs(gn.c_star - cf.c_star)) <= 1e-6
    assert np.max(np.abs(cf.c_star - oracle)) <= 1e-6


def nonlinear_system():
    def res(x, p):
        return np.array([p[0] ** 2 - p[1]])

    def jac(x, p):
        return np.array([[2 * p[0], -1.0]])

    return PhysicsSystem(1, 2, 1, res, jac, name="sq")


def test_gauss_newton_monotone_descent_multiplicative():
    res = solve_gauss_newton([0.0], [3.0, 2.0], nonlinear_system(), MUL, [0.05, 0.02])
    hist = np.array(res.history)
    assert len(hist) > 2
    assert np.all(np.diff(hist) <= 0)
    assert res.h_value <= res.h_identity
    assert res.converged and res.gradient_norm <= 1e-8


def test_gauss_newton_without_analytic_jacobian():
    sys = PhysicsSystem(1, 2, 1, lambda x, p: np.array([p[0] ** 2 - p[1]]))
    ref = solve_gauss_newton([0.0], [3.0, 2.0], nonlinear_system(), ADD, [0.5, 0.5])
    fd = solve_gauss_newton([0.0], [3.0, 2.0], sys, ADD, [0.5, 0.5])
    assert fd.c_star == pytest.approx(ref.c_star, abs=1e-6)


def test_heavy_regularization_keeps_identity():
    res = solve_gauss_newton([0.0], [3.0, 2.0], nonlinear_system(), MUL, [1e12, 1e12])
    assert res.c_star == pytest.approx([1.0, 1.0], abs=1e-9)
    assert res.p_tilde == pytest.approx([3.0, 2.0], abs=1e-8)


def test_max_iter_reports_nonconverged():
    from picof.reconcile import GaussNewtonOptions

    res = solve_gauss_newton([0.0], [3.0, 2.0], nonlinear_system(), ADD, [1e-6, 1e-6],
                             GaussNewtonOptions(max_iter=1))
    assert not res.converged and res.iterations == 1
    assert res.h_value <= res.h_identity


# -- properties ------------------------------------------------------------

instances = st.tuples(
    st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31 - 1)
)


@settings(max_examples=60, deadline=None)
@given(instances, st.floats(1.0, 1e3))
def test_regularization_monotonicity(inst, lam):
    m, q, seed = inst
    rng = np.random.default_rng(seed)
    B, b0 = rng.standard_normal((q, m)), rng.standard_normal(q)
    x, mu = rng.standard_normal(1), rng.standard_normal(m)
    w = 10 ** rng.uniform(-3, 3, m)
    sys = affine_system(B, b0, affine=True)
    c1 = solve_affine(x, mu, sys, ADD, w).c_star
    c2 = solve_affine(x, mu, sys, ADD, lam * w).c_star
    # scaling all weights up never increases the weighted correction size
    pen1, pen2 = w @ c1**2, w @ c2**2
    assert pen2 <= pen1 * (1 + 1e-9) + 1e-12


@settings(max_examples=60, deadline=None)
@given(instances, st.floats(1.0, 1e3), st.floats(1e-3, 1e3))
def test_euclidean_monotonicity_for_uniform_weights(inst, lam, w0):
    m, q, seed = inst
    rng = np.random.default_rng(seed)
    B, b0 = rng.standard_normal((q, m)), rng.standard_normal(q)
    x, mu = rng.standard_normal(1), rng.standard_normal(m)
    sys = affine_system(B, b0, affine=True)
    c1 = solve_affine(x, mu, sys, ADD, np.full(m, w0)).c_star
    c2 = solve_affine(x, mu, sys, ADD, np.full(m, lam * w0)).c_star
    assert np.linalg.norm(c2) <= np.linalg.norm(c1) * (1 + 1e-9) + 1e-12


@settings(max_examples=60, deadline=None)
@given(instances, st.sampled_from([ADD, MUL]))
def test_residual_never_increases(inst, mode):
    m, q, seed = inst
    rng = np.random.default_rng(seed)
    B, b0 = rng.standard_normal((q, m)), rng.standard_normal(q)
    x, mu = rng.standard_normal(1), rng.standard_normal(m)
    w = 10 ** rng.uniform(-3, 3, m)
    res = solve_affine(x, mu, affine_system(B, b0, affine=True), mode, w)
    assert res.residual_sq_after <= res.residual_sq_before + 1e-12
    assert res.h_value <= res.h_identity + 1e-12


@settings(max_examples=40, deadline=None)
@given(instances)
def test_identity_fixed_point(inst):
    m, q, seed = inst
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((q, m))
    mu = rng.standard_normal(m)
    b0 = -B @ mu  # physics satisfied exactly at mu when x = 0
    w = 10 ** rng.uniform(-3, 3, m)
    for mode in (ADD, MUL):
        res = solve_affine([0.0], mu, affine_system(B, b0, affine=True), mode, w)
        ident = np.zeros(m) if mode is ADD else np.ones(m)
        assert np.max(np.abs(res.c_star - ident)) <= 1e-10


def test_stationarity_of_converged_results():
    rng = np.random.default_rng(3)
    for _ in range(20):
        res = solve_gauss_newton([0.0], rng.uniform(0.5, 3, 2), nonlinear_system(), ADD,
                                 10 ** rng.uniform(-2, 2, 2))
        if res.converged:
            assert res.gradient_norm <= 1e-6


# -- composition with surrogates -------------------------------------------

def test_reconcile_uses_bundle_and_normalized_sigma():
    xs = np.array([0.05, 0.1, 0.2])
    y1 = np.array([1.0, 2.0, 4.0])
    y2 = 140 * xs - y1 + np.array([0.5, -0.2, 0.3])  # physics mismatch in the data
    hp = GpHyperparams(1.0, [0.05], 1e-6)
    bundle = SurrogateBundle((
        fit(Dataset(xs[:, None], y1, [0.0], [2.0], "p1"), hp),
        fit(Dataset(xs[:, None], y2, [0.0], [2.0], "p2"), hp),
    ))
    policy = WeightPolicy("sigma_scaled", (0.5, 0.008))
    res = reconcile([1.0], bundle, toy_balance(), ADD, policy)
    from picof.gp import bundle_predict

    mu, sigma = bundle_predict(bundle, [1.0])
    w = compute_weights(policy, sigma / bundle.scales)
    direct = solve_affine([1.0], mu, toy_balance(), ADD, w, bundle.scales)
    assert np.array_equal(res.c_star, direct.c_star)
    assert res.residual_sq_after <= res.residual_sq_before
