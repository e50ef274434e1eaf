import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossprop.harness import numeric_gradients, relative_error
from crossprop.net import ActivationKind
from crossprop.optim import (BaselineState, CrosspropApproxState, CrosspropState, DivergenceError,
                             adam_step, backprop_step, crossprop_approx_step, crossprop_step,
                             gradients, make_state, momentum_step, rmsprop_step)

from oracles import adam_first_step, close, crossprop_approx_oracle, crossprop_oracle

TANH, LOGISTIC = ActivationKind.TANH, ActivationKind.LOGISTIC
KINDS = [TANH, LOGISTIC]


def random_scalar_problem(rng, m, n):
    U = rng.normal(0, 0.7, size=(m, n))
    W = rng.normal(0, 0.7, size=n)
    H = rng.normal(0, 0.3, size=(m, n))
    x = rng.normal(size=m)
    return U, W, H, x, float(rng.normal())


def one_hot(k, c):
    t = np.zeros(k)
    t[c] = 1.0
    return t


# --- crossprop -------------------------------------------------------------

def test_crossprop_single_unit_against_transcription():
    U, W, H = np.array([[0.5]]), np.array([0.5]), np.zeros((1, 1))
    state = CrosspropState(U, W, alpha=0.1, eta=0.0)
    _, delta = crossprop_step(state, [1.0], 1.0, TANH)
    eU, eW, eH, ed = crossprop_oracle(U, W, H, [1.0], 1.0, 0.1, 0.0)
    assert close(state.U, eU) and close(state.W, eW) and close(state.H, eH)
    assert delta == pytest.approx(ed, rel=1e-14)
    # with h = 0 and eta = 0 the incoming weight stays put on the first step
    assert state.U[0, 0] == 0.5
    assert state.H[0, 0] == pytest.approx(0.1 * ed * (1 - np.tanh(0.5) ** 2), rel=1e-14)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("eta", [0.0, 0.3, 1.0])
def test_crossprop_matches_transcription(kind, eta):
    rng = np.random.default_rng(11)
    for _ in range(10):
        m, n = rng.integers(1, 6, size=2)
        U, W, H, x, y = random_scalar_problem(rng, m, n)
        state = CrosspropState(U, W, 0.05, eta, H=H)
        _, delta = crossprop_step(state, x, y, kind)
        eU, eW, eH, ed = crossprop_oracle(U, W, H, x, y, 0.05, eta, kind.value)
        assert close(state.U, eU) and close(state.W, eW) and close(state.H, eH)
        assert delta == pytest.approx(ed, rel=1e-12)


def test_crossprop_update_order_is_irrelevant():
    rng = np.random.default_rng(5)
    U, W, H, x, y = random_scalar_problem(rng, 4, 3)
    fwd = crossprop_oracle(U, W, H, x, y, 0.1, 0.4)
    rev = crossprop_oracle(U, W, H, x, y, 0.1, 0.4, reverse=True)
    for a, b in zip(fwd, rev):
        assert np.array_equal(a, b)
    state = CrosspropState(U, W, 0.1, 0.4, H=H)
    crossprop_step(state, x, y)
    assert close(state.U, fwd[0]) and close(state.H, fwd[2])


def test_crossprop_zero_delta():
    rng = np.random.default_rng(2)
    U, W, H, x, _ = random_scalar_problem(rng, 3, 4)
    alpha, eta = 0.1, 0.25
    phi = np.tanh(x @ U)
    state = CrosspropState(U, W, alpha, eta, H=H)
    _, delta = crossprop_step(state, x, float(phi @ W))
    assert delta == 0.0
    assert np.array_equal(state.U, U) and np.array_equal(state.W, W)
    D = np.outer(x, 1 - phi**2)
    expected = H * (1 - alpha * (1 - eta) * phi**2) - alpha * eta * W * phi * D
    assert np.allclose(state.H, expected, rtol=1e-14, atol=0)


def test_crossprop_eta_one_is_backprop_on_u():
    rng = np.random.default_rng(8)
    U, W, H, x, y = random_scalar_problem(rng, 3, 5)
    state = CrosspropState(U, W, 0.2, 1.0, H=H)
    _, delta = crossprop_step(state, x, y)
    phi = np.tanh(x @ U)
    assert np.allclose(state.U, U + 0.2 * delta * W * np.outer(x, 1 - phi**2), rtol=1e-14, atol=0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), n=st.integers(1, 8),
       kind=st.sampled_from(KINDS), alpha=st.floats(1e-4, 0.5))
def test_eta_one_crossprop_equals_backprop(seed, m, n, kind, alpha):
    rng = np.random.default_rng(seed)
    U, W, H, x, y = random_scalar_problem(rng, m, n)
    cp = CrosspropState(U, W, alpha, 1.0, H=H)
    bp = BaselineState(U, W, alpha)
    _, d1 = crossprop_step(cp, x, y, kind)
    _, d2 = backprop_step(bp, x, y, kind)
    assert d1 == d2
    assert close(cp.U, bp.U) and close(cp.W, bp.W)


def test_h_trace_decays_when_error_is_held_at_zero():
    rng = np.random.default_rng(4)
    U, W, H, x, _ = random_scalar_problem(rng, 3, 4)
    state = CrosspropState(U, W, alpha=0.5, eta=0.0, H=H + 0.5)
    phi = np.tanh(x @ U)
    assert np.all((0 < 0.5 * phi**2) & (0.5 * phi**2 < 2))
    prev = np.abs(state.H)
    for _ in range(100):
        crossprop_step(state, x, float(np.tanh(x @ state.U) @ state.W))
        cur = np.abs(state.H)
        assert np.all(cur < prev)
        prev = cur
    assert np.array_equal(state.U, U) and np.array_equal(state.W, W)


def test_crossprop_state_validation():
    with pytest.raises(ValueError):
        CrosspropState(np.zeros((2, 3)), np.zeros(2), 0.1)
    with pytest.raises(ValueError):
        CrosspropState(np.zeros((2, 3)), np.zeros(3), 0.1, eta=1.5)
    with pytest.raises(ValueError):
        CrosspropState(np.zeros((2, 3)), np.zeros(3), -0.1)
    s = CrosspropState(np.ones((2, 3)), np.ones(3), 0.1)
    assert np.array_equal(s.H, np.zeros((2, 3)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported_with_example_index():
    state = CrosspropState(np.full((1, 1), 1e300), np.array([1e300]), alpha=1e10, eta=1.0)
    state.t = 41
    U0 = state.U.copy()
    with pytest.raises(DivergenceError) as info:
        crossprop_step(state, [1.0], 1e308)
    assert info.value.step == 41
    assert np.array_equal(state.U, U0)


# --- crossprop-approx ------------------------------------------------------

def random_multi_problem(rng, m, n, k):
    U = rng.normal(0, 0.7, size=(m, n))
    W = rng.normal(0, 0.7, size=(n, k))
    H = rng.normal(0, 0.3, size=(n, k))
    return U, W, H, rng.normal(size=m), one_hot(k, rng.integers(k))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("eta", [0.0, 0.5, 1.0])
def test_crossprop_approx_matches_transcription(kind, eta):
    rng = np.random.default_rng(21)
    for _ in range(10):
        m, n, k = rng.integers(1, 5, size=3) + np.array([0, 0, 1])
        U, W, H, x, t = random_multi_problem(rng, m, n, k)
        state = CrosspropApproxState(U, W, 0.05, eta, H=H)
        _, delta = crossprop_approx_step(state, x, t, kind)
        eU, eW, eH, ed = crossprop_approx_oracle(U, W, H, x, t, 0.05, eta, kind.value)
        assert close(state.U, eU) and close(state.W, eW) and close(state.H, eH)
        assert close(delta, ed)


def test_crossprop_approx_squared_loss_matches_transcription():
    rng = np.random.default_rng(22)
    U, W, H, x, _ = random_multi_problem(rng, 3, 4, 1)
    state = CrosspropApproxState(U, W, 0.05, 0.2, H=H, loss="squared")
    crossprop_approx_step(state, x, 0.7)
    eU, eW, eH, _ = crossprop_approx_oracle(U, W, H, x, [0.7], 0.05, 0.2, loss="squared")
    assert close(state.U, eU) and close(state.W, eW) and close(state.H, eH)


def test_crossprop_approx_zero_delta():
    U, W = np.full((2, 2), 0.1), np.zeros((2, 3))
    H = np.array([[0.2, -0.1, 0.3], [0.0, 0.5, -0.4]])
    # zero W gives zero linear outputs, so a zero target means zero error
    state = CrosspropApproxState(U, W, 0.1, 0.5, H=H, loss="squared")
    x = np.array([1.0, -1.0])
    _, delta = crossprop_approx_step(state, x, np.zeros(3))
    assert np.array_equal(delta, np.zeros(3))
    assert np.array_equal(state.U, U) and np.array_equal(state.W, W)
    phi = np.tanh(x @ U)
    assert np.allclose(state.H, H * (1 - 0.1 * 0.5 * phi**2)[:, None], rtol=1e-15, atol=0)


def test_crossprop_approx_eta_one_is_multi_output_backprop():
    rng = np.random.default_rng(23)
    U, W, H, x, t = random_multi_problem(rng, 3, 4, 3)
    cp = CrosspropApproxState(U, W, 0.1, 1.0, H=H)
    bp = BaselineState(U, W, 0.1)
    crossprop_approx_step(cp, x, t)
    backprop_step(bp, x, t)
    assert close(cp.U, bp.U) and close(cp.W, bp.W)


def test_crossprop_approx_rejects_bad_targets():
    state = CrosspropApproxState(np.zeros((2, 2)), np.zeros((2, 3)), 0.1)
    with pytest.raises(ValueError):
        crossprop_approx_step(state, [1, 0], [0.5, 0.5, 0])
    with pytest.raises(ValueError):
        crossprop_approx_step(state, [1, 0], [1, 0])


def test_approx_at_one_output_differs_from_exact_crossprop():
    # the multi-output form scales the trace term by d phi / d u; the scalar form does not
    rng = np.random.default_rng(9)
    U, W, H, x, y = random_scalar_problem(rng, 3, 2)
    exact = CrosspropState(U, W, 0.1, 0.0, H=np.ones_like(U))
    approx = CrosspropApproxState(U, W[:, None], 0.1, 0.0, H=np.ones((2, 1)), loss="squared")
    crossprop_step(exact, x, y)
    crossprop_approx_step(approx, x, y)
    assert np.allclose(exact.W, approx.W[:, 0], rtol=1e-14, atol=0)
    assert not np.allclose(exact.U, approx.U)


# --- backprop family -------------------------------------------------------

@pytest.mark.parametrize("step", [backprop_step, momentum_step, rmsprop_step, adam_step])
@pytest.mark.parametrize("multi", [False, True])
def test_zero_delta_is_stationary_from_fresh_buffers(step, multi):
    rng = np.random.default_rng(1)
    U = rng.normal(size=(3, 4))
    W = rng.normal(size=(4, 2)) if multi else rng.normal(size=4)
    x = rng.normal(size=3)
    target = np.tanh(x @ U) @ W
    state = BaselineState(U, W, 0.1, method=step.__name__.replace("_step", ""), loss="squared")
    _, delta = step(state, x, target)
    assert np.all(np.asarray(delta) == 0)
    assert np.array_equal(state.U, U) and np.array_equal(state.W, W)


def test_crossprop_steps_are_stationary_at_zero_delta():
    rng = np.random.default_rng(12)
    U, W, H, x, _ = random_scalar_problem(rng, 2, 3)
    s = CrosspropState(U, W, 0.1, 0.0, H=H)
    crossprop_step(s, x, float(np.tanh(x @ U) @ W))
    assert np.array_equal(s.U, U) and np.array_equal(s.W, W)


def test_momentum_zero_equals_backprop():
    rng = np.random.default_rng(3)
    U, W, _, x, t = random_multi_problem(rng, 3, 4, 3)
    a = BaselineState(U, W, 0.1, method="momentum", momentum=0.0)
    b = BaselineState(U, W, 0.1)
    for _ in range(5):
        momentum_step(a, x, t)
        backprop_step(b, x, t)
    assert np.allclose(a.U, b.U, rtol=1e-14, atol=0) and np.allclose(a.W, b.W, rtol=1e-14, atol=0)


def test_momentum_accumulates_velocity():
    rng = np.random.default_rng(3)
    U, W, _, x, y = random_scalar_problem(rng, 2, 3)
    s = BaselineState(U, W, 0.1, method="momentum", momentum=0.9)
    gU1, gW1, _ = gradients(U, W, x, y)
    momentum_step(s, x, y)
    U1, W1 = s.U.copy(), s.W.copy()
    gU2, gW2, _ = gradients(U1, W1, x, y)
    momentum_step(s, x, y)
    assert np.allclose(s.U, U1 + 0.9 * (-0.1 * gU1) - 0.1 * gU2, rtol=1e-14, atol=1e-16)
    assert np.allclose(s.W, W1 + 0.9 * (-0.1 * gW1) - 0.1 * gW2, rtol=1e-14, atol=1e-16)


def test_adam_first_step_against_hand_transcription():
    rng = np.random.default_rng(6)
    U, W, _, x, y = random_scalar_problem(rng, 3, 4)
    gU, gW, _ = gradients(U, W, x, y)
    s = BaselineState(U, W, 0.01, method="adam")
    adam_step(s, x, y)
    assert np.allclose(s.U, adam_first_step(U, gU, 0.01), rtol=1e-14, atol=0)
    assert np.allclose(s.W, adam_first_step(W, gW, 0.01), rtol=1e-14, atol=0)
    # bias correction makes the first move about alpha * sign(g)
    big = np.abs(gW) > 1e-3
    assert np.allclose((W - s.W)[big], 0.01 * np.sign(gW[big]), rtol=1e-4)
    assert s.t == 1
    assert np.allclose(s.buffers["m_W"], 0.1 * gW) and np.allclose(s.buffers["v_W"], 0.001 * gW**2)


def test_rmsprop_zero_gradient_decays_accumulator():
    rng = np.random.default_rng(6)
    U, W = rng.normal(size=(3, 4)), rng.normal(size=4)
    x = rng.normal(size=3)
    s = BaselineState(U, W, 0.1, method="rmsprop", rho=0.9)
    s.buffers["s_U"][:] = 2.0
    s.buffers["s_W"][:] = 3.0
    rmsprop_step(s, x, float(np.tanh(x @ U) @ W))
    assert np.array_equal(s.U, U) and np.array_equal(s.W, W)
    assert np.allclose(s.buffers["s_U"], 1.8) and np.allclose(s.buffers["s_W"], 2.7)


def test_rmsprop_step_formula():
    rng = np.random.default_rng(16)
    U, W, _, x, y = random_scalar_problem(rng, 2, 3)
    gU, gW, _ = gradients(U, W, x, y)
    s = BaselineState(U, W, 0.01, method="rmsprop", rho=0.9, eps=1e-8)
    rmsprop_step(s, x, y)
    assert np.allclose(s.W, W - 0.01 * gW / (np.sqrt(0.1 * gW**2) + 1e-8), rtol=1e-14, atol=0)


@pytest.mark.parametrize("loss,k", [("squared", 1), ("squared", 3), ("cross_entropy", 2), ("cross_entropy", 5)])
@pytest.mark.parametrize("kind", KINDS)
def test_backprop_gradients_match_finite_differences(loss, k, kind):
    rng = np.random.default_rng(100 + k)
    for _ in range(5):
        m, n = rng.integers(1, 6, size=2)
        U = rng.normal(0, 0.7, size=(m, n))
        W = rng.normal(size=n) if (loss == "squared" and k == 1) else rng.normal(size=(n, k))
        x = rng.normal(size=m)
        t = float(rng.normal()) if W.ndim == 1 else (one_hot(k, rng.integers(k)) if loss == "cross_entropy"
                                                     else rng.normal(size=k))
        gU, gW, _ = gradients(U, W, x, t, kind, loss)
        nU, nW = numeric_gradients(U, W, x, t, kind, loss, epsilon=1e-5)
        assert relative_error(gU, nU).max() <= 1e-6
        assert relative_error(gW, nW).max() <= 1e-6


def test_backprop_step_applies_gradients_simultaneously():
    rng = np.random.default_rng(17)
    U, W, _, x, t = random_multi_problem(rng, 3, 2, 2)
    gU, gW, _ = gradients(U, W, x, t)
    s = BaselineState(U, W, 0.3)
    backprop_step(s, x, t)
    assert np.allclose(s.U, U - 0.3 * gU, rtol=1e-15, atol=0)
    assert np.allclose(s.W, W - 0.3 * gW, rtol=1e-15, atol=0)


def test_baseline_state_validation():
    U, W = np.zeros((2, 3)), np.zeros(3)
    for kw in [dict(method="adadelta"), dict(momentum=1.0), dict(rho=1.0), dict(beta1=0.0),
               dict(eps=0.0), dict(loss="hinge"), dict(alpha=-1.0)]:
        args = dict(alpha=0.1) | kw
        with pytest.raises(ValueError):
            BaselineState(U, W, **args)
    s = BaselineState(U, W, 0.1, method="adam")
    assert set(s.buffers) == {"m_U", "m_W", "v_U", "v_W"}
    assert all(not b.any() for b in s.buffers.values())


def test_make_state_dispatch():
    U, W = np.zeros((2, 3)), np.zeros(3)
    assert isinstance(make_state("crossprop", U, W[:, None], 0.1), CrosspropState)
    s = make_state("crossprop_approx", U, W, 0.1)
    assert s.W.shape == (3, 1) and s.loss == "squared"
    assert make_state("adam", U, W, 0.1, beta1=0.8).beta1 == 0.8
    with pytest.raises(ValueError):
        make_state("crossprop", U, np.zeros((3, 2)), 0.1)
    with pytest.raises(ValueError):
        make_state("sgd", U, W, 0.1)
