"""Optimizer semantics against a hand-unrolled recurrence."""
import math

import numpy as np
import pytest

from layerflow.adam import Adam, AdamState, adam_step
from layerflow.tensor import ShapeError, Tensor


def reference_adam(p0, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam unrolled with plain python floats: the oracle the
    implementation is frozen against."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= lr * mhat / (math.sqrt(vhat) + eps)
    return p


def test_first_step_matches_signed_step_size():
    # with bias correction the first update is lr * g / (|g| + eps)
    params = {"p": Tensor(np.array([1.0]))}
    adam_step(params, {"p": np.array([0.5])}, AdamState(), lr=1e-3)
    expected = reference_adam(1.0, [0.5])
    assert params["p"].data[0] == pytest.approx(expected, abs=1e-15)
    assert params["p"].data[0] == pytest.approx(0.999, abs=1e-6)


def test_two_steps_match_hand_unrolled_recurrence():
    grads = [0.5, -0.25]
    params = {"p": Tensor(np.array([1.0]))}
    state = AdamState()
    for g in grads:
        adam_step(params, {"p": np.array([g])}, state, lr=1e-3)
    assert state.step == 2
    expected = reference_adam(1.0, grads)
    assert params["p"].data[0] == pytest.approx(expected, rel=1e-14)


def test_vector_params_match_elementwise_reference():
    rng = np.random.default_rng(21)
    p0 = rng.normal(size=7)
    gs = [rng.normal(size=7) for _ in range(5)]
    params = {"w": Tensor(p0.copy())}
    state = AdamState()
    for g in gs:
        adam_step(params, {"w": g}, state, lr=0.01, beta1=0.8, beta2=0.95)
    for i in range(7):
        want = reference_adam(p0[i], [g[i] for g in gs], lr=0.01, b1=0.8, b2=0.95)
        assert params["w"].data[i] == pytest.approx(want, rel=1e-12)


def test_zero_gradients_fresh_state_leave_params_unchanged():
    p0 = np.array([0.3, -1.2, 4.0])
    params = {"p": Tensor(p0.copy())}
    adam_step(params, {"p": np.zeros(3)}, AdamState())
    assert np.array_equal(params["p"].data, p0)


def test_missing_gradient_treated_as_zero():
    p0 = np.array([2.0])
    params = {"a": Tensor(p0.copy()), "b": Tensor(np.array([1.0]))}
    adam_step(params, {"b": np.array([0.1])}, AdamState())
    assert np.array_equal(params["a"].data, p0)
    assert params["b"].data[0] != 1.0


def test_non_finite_gradient_rejected_naming_parameter():
    params = {"trunk.w": Tensor(np.ones(2))}
    with pytest.raises(ValueError, match="trunk.w"):
        adam_step(params, {"trunk.w": np.array([1.0, np.nan])}, AdamState())


def test_shape_mismatch_rejected():
    params = {"p": Tensor(np.ones(3))}
    with pytest.raises(ShapeError, match="p"):
        adam_step(params, {"p": np.ones(4)}, AdamState())


def test_wrapper_uses_tensor_grads():
    p = Tensor(np.array([1.0]))
    p.grad = np.array([0.5])
    opt = Adam({"p": p}, lr=1e-3)
    opt.step()
    assert p.data[0] == pytest.approx(reference_adam(1.0, [0.5]), abs=1e-15)
    assert opt.state.step == 1
