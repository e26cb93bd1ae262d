import numpy as np
import pytest

from foldtear import numeric as nm
from foldtear.numeric import Tensor


def test_relu_values():
    out = nm.relu(Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = nm.matmul(Tensor(np.eye(3)), Tensor(a))
    np.testing.assert_allclose(out.data, a, rtol=0, atol=0)


def test_max_over_rows_argmax():
    # 2 points x 2 features, hand-evaluated: column max [3, 5], argmax [1, 0]
    x = Tensor(np.array([[1.0, 5.0], [3.0, 2.0]]), requires_grad=True)
    out = nm.max_over_rows(x)
    np.testing.assert_array_equal(out.data, [[3.0, 5.0]])
    loss = nm.sum_all(out)
    nm.backward(loss)
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])


def test_max_tie_first_index_wins():
    x = Tensor(np.array([[2.0], [2.0], [1.0]]), requires_grad=True)
    nm.backward(nm.sum_all(nm.max_over_rows(x)))
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0], [0.0]])


def test_sum_gradient_is_ones():
    x = Tensor(np.zeros(4), requires_grad=True)
    nm.backward(nm.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_relu_dead_unit_gradient():
    x = Tensor(np.array([-1.0]), requires_grad=True)
    nm.backward(nm.sum_all(nm.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0])


def test_bias_add_broadcast_and_grad():
    x = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    nm.backward(nm.sum_all(nm.add(x, b)))
    np.testing.assert_array_equal(b.grad, [3.0, 3.0])
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_concat_and_slice_grads():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    cat = nm.concat([a, b])
    assert cat.shape == (2, 5)
    sl = nm.slice_rows(cat, 1, 2)
    nm.backward(nm.sum_all(sl))
    np.testing.assert_array_equal(a.grad, [[0, 0], [1, 1]])
    np.testing.assert_array_equal(b.grad, [[0, 0, 0], [1, 1, 1]])


def test_repeat_interleave_rows_grad():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    out = nm.repeat_interleave_rows(a, 3)
    assert out.shape == (6, 2)
    np.testing.assert_array_equal(out.data[:3], np.tile([[1.0, 2.0]], (3, 1)))
    nm.backward(nm.sum_all(out))
    np.testing.assert_array_equal(a.grad, [[3.0, 3.0], [3.0, 3.0]])


def test_shape_errors_name_offenders():
    with pytest.raises(nm.ShapeError, match=r"\(2, 3\)"):
        nm.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(nm.ShapeError, match="scalar"):
        nm.backward(Tensor(np.ones(3), requires_grad=True))


def _tiny_mlp(rng, dtype=np.float64):
    params = {
        "w1": Tensor(nm.glorot_uniform(rng, 5, 7, dtype), requires_grad=True),
        "b1": Tensor(np.zeros(7, dtype), requires_grad=True),
        "w2": Tensor(nm.glorot_uniform(rng, 7, 4, dtype), requires_grad=True),
        "b2": Tensor(rng.normal(size=4).astype(dtype), requires_grad=True),
    }
    x = Tensor(rng.normal(size=(6, 5)).astype(dtype))

    def forward():
        h = nm.relu(nm.add(nm.matmul(x, params["w1"]), params["b1"]))
        out = nm.add(nm.matmul(h, params["w2"]), params["b2"])
        return nm.mean_all(nm.relu(out))

    return params, forward


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params, forward = _tiny_mlp(rng)
    err = nm.finite_difference_check(params, forward, h=1e-6)
    assert err <= 1e-4


def test_ops_gradcheck_each_primitive():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    y = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    cases = {
        "sub_scale": lambda: nm.mean_all(nm.scale(nm.sub(x, y), 2.5)),
        "concat": lambda: nm.mean_all(nm.relu(nm.concat([x, y]))),
        "segments": lambda: nm.sum_all(nm.max_over_segments(x, 2)),
        "slice": lambda: nm.sum_all(nm.slice_rows(x, 1, 3)),
    }
    for label, forward in cases.items():
        err = nm.finite_difference_check({"x": x, "y": y}, forward, h=1e-6)
        assert err <= 1e-4, label


def test_backward_twice_is_identical():
    rng = np.random.default_rng(3)
    params, forward = _tiny_mlp(rng)
    loss = forward()
    nm.backward(loss)
    first = {k: p.grad.copy() for k, p in params.items()}
    nm.backward(loss)
    for k, p in params.items():
        np.testing.assert_array_equal(first[k], p.grad)


def test_nonparticipating_param_gets_zero_grad():
    unused = Tensor(np.ones(3), requires_grad=True)
    x = Tensor(np.ones(3), requires_grad=True)
    nm.backward(nm.sum_all(x), params=[unused, x])
    np.testing.assert_array_equal(unused.grad, np.zeros(3))


def test_forward_determinism():
    out = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        params, forward = _tiny_mlp(rng)
        loss = forward()
        nm.backward(loss)
        out.append((float(loss.data), {k: p.grad.copy() for k, p in params.items()}))
    assert out[0][0] == out[1][0]
    for k in out[0][1]:
        np.testing.assert_array_equal(out[0][1][k], out[1][1][k])


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = nm.Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    np.testing.assert_array_equal(p.data, before)
    assert opt.step_count == 1


def test_adam_first_step_hand_value():
    # g=1, lr=0.1: bias-corrected first step moves by lr/(1+eps) ~ 0.1
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = nm.Adam({"p": p}, lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    expected = -0.1 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-6)


def test_adam_is_stateful_not_commutative():
    # two unit-gradient steps differ from one double-length step
    def run(gs, lr=0.05):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = nm.Adam({"p": p}, lr=lr)
        for g in gs:
            p.grad = np.array([g])
            opt.step()
        return float(p.data[0])

    assert run([1.0, 1.0]) != pytest.approx(run([2.0]), abs=1e-12)


def test_adam_rejects_nonfinite_gradient():
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = nm.Adam({"badparam": p}, lr=0.1)
    p.grad = np.array([np.nan])
    with pytest.raises(nm.NonFiniteGradient, match="badparam"):
        opt.step()


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    params = {"a.w": Tensor(rng.normal(size=(3, 2)).astype(np.float32),
                            requires_grad=True),
              "a.b": Tensor(np.zeros(2, np.float32), requires_grad=True)}
    opt = nm.Adam(params, lr=0.01)
    params["a.w"].grad = np.ones((3, 2), np.float32)
    params["a.b"].grad = np.ones(2, np.float32)
    opt.step()
    path = tmp_path / "ck.npz"
    nm.save_checkpoint(path, params, opt.state_dict(), meta={"tag": "t"})
    loaded, adam_state, meta = nm.load_checkpoint(path)
    assert meta == {"tag": "t"}
    np.testing.assert_array_equal(loaded["a.w"], params["a.w"].data)
    assert adam_state["step"] == 1
    np.testing.assert_array_equal(adam_state["m"]["a.b"], opt.m["a.b"])


def test_checkpoint_bad_file(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"not a zip")
    with pytest.raises(OSError, match="junk.npz"):
        nm.load_checkpoint(path)
