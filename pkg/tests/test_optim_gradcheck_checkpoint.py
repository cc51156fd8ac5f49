import numpy as np
import pytest

from dip import autodiff as ad
from dip.autodiff import Tensor
from dip.checkpoint import load_checkpoint, save_checkpoint
from dip.gradcheck import NondeterministicClosure, finite_diff_check
from dip.optim import AdamState, adam_step


def test_adam_first_step_is_lr_sized():
    p, _ = adam_step({"x": np.array([[0.0]])}, {"x": np.array([[1.0]])}, AdamState(lr=0.1))
    assert p["x"][0, 0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_keeps_params_and_advances_t():
    params = {"x": np.array([[1.5, -2.0]])}
    p, s = adam_step(params, {"x": np.zeros((1, 2))}, AdamState())
    np.testing.assert_array_equal(p["x"], params["x"])
    assert s.t == 1


def test_adam_quadratic_descent():
    theta = {"x": np.array([[0.0]])}
    state = AdamState(lr=0.1)
    for _ in range(100):
        theta, state = adam_step(theta, {"x": 2 * (theta["x"] - 3.0)}, state)
    assert abs(theta["x"][0, 0] - 3.0) < 0.5


def test_adam_does_not_mutate_inputs():
    params = {"x": np.ones((2, 2))}
    grads = {"x": np.ones((2, 2))}
    state = AdamState()
    adam_step(params, grads, state)
    np.testing.assert_array_equal(params["x"], np.ones((2, 2)))
    assert state.t == 0 and state.m == {}


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"x": np.ones((2, 2))}, {"x": np.ones((2, 1))}, AdamState())


def test_adam_lr_zero_is_identity():
    params = {"x": np.random.default_rng(0).normal(size=(3, 3))}
    p, _ = adam_step(params, {"x": np.ones((3, 3))}, AdamState(lr=0.0))
    np.testing.assert_array_equal(p["x"], params["x"])


def test_gradcheck_linear_model_exact():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4))

    def closure(p):
        return ad.reduce_sum(ad.affine(Tensor(X), p["w"], p["b"]))

    params = {"w": rng.normal(size=(4, 2)), "b": rng.normal(size=(1, 2))}
    assert finite_diff_check(closure, params, probes=10) < 1e-9


def test_gradcheck_detects_nondeterminism():
    rng = np.random.default_rng()

    def closure(p):
        return ad.reduce_sum(ad.scale(p["w"], float(rng.normal())))

    with pytest.raises(NondeterministicClosure):
        finite_diff_check(closure, {"w": np.ones((2, 2))})


def test_gradcheck_flags_wrong_gradient():
    # a primitive whose backward is deliberately wrong must be caught
    def bad_square(a):
        return ad._record("bad", a.data ** 2, (a,), lambda g: (g * a.data,))

    def closure(p):
        return ad.reduce_sum(bad_square(p["w"]))

    assert finite_diff_check(closure, {"w": np.array([[1.0, 2.0]])}) > 0.3


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_checkpoint_roundtrip_bitwise(tmp_path, dtype):
    rng = np.random.default_rng(1)
    params = {"a.w": rng.normal(size=(3, 4)).astype(dtype), "b": rng.normal(size=(1, 7)).astype(dtype)}
    save_checkpoint(tmp_path / "c.bin", params, {"epoch": 3})
    loaded, meta = load_checkpoint(tmp_path / "c.bin")
    assert meta == {"epoch": 3}
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].dtype == dtype
        np.testing.assert_array_equal(loaded[k], params[k])


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"w": np.ones((4, 4))})
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.bin")
