import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperce import nn
from hyperce.nn import Tensor
from hyperce.nn.ops import dropout_mask

from helpers import nested_loop_conv2d

rng = np.random.default_rng(0)


def T(a, grad=False, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=grad)


def test_conv2d_identity_kernel():
    x = rng.standard_normal((2, 3, 5, 4))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1
    out = nn.conv2d(T(x), T(w), T(np.zeros(3)))
    assert np.allclose(out.data, x, atol=1e-15)


def test_conv2d_matches_nested_loops():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    w = np.ones((1, 1, 3, 3))
    assert np.allclose(nn.conv2d(T(x), T(w)).data, nested_loop_conv2d(x, w, None))
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    assert np.allclose(nn.conv2d(T(x), T(w), T(b)).data, nested_loop_conv2d(x, w, b), atol=1e-12)


def test_per_sample_conv2d_matches_nested_loops():
    x = rng.standard_normal((3, 2, 4, 4))
    w = rng.standard_normal((3, 5, 2, 3, 3))
    b = rng.standard_normal((3, 5))
    out = nn.conv2d(T(x), T(w), T(b)).data
    for i in range(3):
        assert np.allclose(out[i:i + 1], nested_loop_conv2d(x[i:i + 1], w[i], b[i]), atol=1e-12)


def test_conv2d_shape_mismatch():
    with pytest.raises(ValueError):
        nn.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((3, 4, 3, 3))))


def test_conv_transpose_single_pixel():
    k = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = nn.conv_transpose2d(T([[[[2.0]]]]), T(k.reshape(1, 1, 2, 2)))
    assert np.array_equal(out.data[0, 0], 2 * k)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5))
def test_conv_transpose_doubles_dims(b, c, h, w):
    out = nn.conv_transpose2d(T(np.ones((b, c, h, w))), T(np.ones((c, 2, 2, 2))), T(np.zeros(2)))
    assert out.shape == (b, 2, 2 * h, 2 * w)


def test_conv_transpose_is_adjoint_of_stride2_conv():
    x = rng.standard_normal((1, 2, 3, 3))
    w = rng.standard_normal((2, 3, 2, 2))
    y = rng.standard_normal((1, 3, 6, 6))
    up = nn.conv_transpose2d(T(x), T(w)).data
    # stride-2 kernel-2 convolution of y with the same weights
    down = np.einsum("bohpwq,copq->bchw", y.reshape(1, 3, 3, 2, 3, 2), w)
    assert np.sum(up * y) == pytest.approx(np.sum(x * down), rel=1e-12)


def test_maxpool():
    assert nn.maxpool2(T(np.full((1, 1, 4, 4), 2.5))).data.tolist() == [[[[2.5, 2.5], [2.5, 2.5]]]]
    assert nn.maxpool2(T([[[[1.0, 2.0], [3.0, 4.0]]]])).data.item() == 4.0
    with pytest.raises(ValueError):
        nn.maxpool2(T(np.zeros((1, 1, 3, 4))))


def test_maxpool_ties_route_to_first_index():
    x = T(np.ones((1, 1, 2, 2)), grad=True)
    nn.maxpool2(x).backward(np.ones((1, 1, 1, 1)))
    assert x.grad.ravel().tolist() == [1, 0, 0, 0]


def test_fully_connected():
    x = rng.standard_normal((3, 4))
    assert np.array_equal(nn.fully_connected(T(x), T(np.eye(4)), T(np.zeros(4))).data, x)
    assert nn.fully_connected(T([2.0, 3.0]), T([[1.0, 1.0]]), T([1.0])).data.tolist() == [6.0]
    with pytest.raises(ValueError):
        nn.fully_connected(T(np.ones((2, 3))), T(np.ones((2, 4))))


def test_activations_and_pooling():
    assert nn.sigmoid(T([0.0])).data[0] == 0.5
    assert nn.relu(T([-1.0])).data[0] == 0.0
    s = nn.sigmoid(T([-800.0, 800.0])).data
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0
    x = np.zeros((2, 3, 4, 5))
    x[:, 1] = 1.7
    assert np.allclose(nn.global_avg_pool(T(x)).data, [[0, 1.7, 0]] * 2)


def test_concat_and_scale():
    a, b = rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((2, 2, 3, 3))
    c = nn.concat_channels(T(a), T(b)).data
    assert np.array_equal(c[:, :1], a) and np.array_equal(c[:, 1:], b)
    s = rng.random((2, 2))
    assert np.allclose(nn.scale_channels(T(b), T(s)).data, b * s[:, :, None, None])


def test_channel_dropout_statistics():
    x = np.ones((1000, 100, 1, 1))
    out = nn.channel_dropout(T(x), 0.3, True, key=(7, 1, 0)).data
    kept = out[:, :, 0, 0] != 0
    assert kept.mean() == pytest.approx(0.7, abs=0.01)
    assert out.mean() == pytest.approx(1.0, rel=0.02)
    assert np.allclose(out[kept], 1 / 0.7)


def test_channel_dropout_drops_whole_channels_and_is_identity_when_eval():
    x = rng.standard_normal((4, 8, 3, 3)) + 5
    out = nn.channel_dropout(T(x), 0.5, True, key=(1,)).data
    zero = np.all(out == 0, axis=(2, 3))
    assert np.all(zero | np.all(out != 0, axis=(2, 3)))
    assert np.array_equal(nn.channel_dropout(T(x), 0.5, False).data, x)
    for p in (-0.1, 1.0):
        with pytest.raises(ValueError):
            nn.channel_dropout(T(x), p, True)


def test_dropout_masks_keyed_by_seed_step_layer():
    a = dropout_mask((64, 16), 0.3, (1, 2, 3))
    assert np.array_equal(a, dropout_mask((64, 16), 0.3, (1, 2, 3)))
    assert not np.array_equal(a, dropout_mask((64, 16), 0.3, (1, 3, 3)))
    assert not np.array_equal(a, dropout_mask((64, 16), 0.3, (1, 2, 4)))


def test_mse_loss_sums_and_divides_by_batch():
    p, t = rng.standard_normal((4, 2, 3, 3)), rng.standard_normal((4, 2, 3, 3))
    assert nn.mse_loss(T(p), t).item() == pytest.approx(np.sum((p - t) ** 2) / 4, rel=1e-12)


def test_adam_examples():
    p = [np.array([1.0, -2.0, 3.0])]
    st = nn.AdamState()
    nn.adam_step(p, [np.zeros(3)], st)
    assert p[0].tolist() == [1.0, -2.0, 3.0]
    p = [np.zeros(4)]
    g = np.array([1e-3, -5.0, 200.0, -1e-2])
    nn.adam_step(p, [g], nn.AdamState(), lr=1e-3)
    assert np.allclose(p[0], -1e-3 * np.sign(g), rtol=1e-4)
    q1, q2 = [np.ones(3)], [np.ones(3)]
    s1, s2 = nn.AdamState(), nn.AdamState()
    for k in range(3):
        nn.adam_step(q1, [np.arange(3.0) + k], s1)
        nn.adam_step(q2, [np.arange(3.0) + k], s2)
    assert np.array_equal(q1[0], q2[0]) and s1.step == 3


def test_adam_optimizer_class_uses_tensor_grads():
    w = nn.parameter(np.array([0.5, -0.5]))
    opt = nn.Adam([w], lr=0.1)
    nn.mse_loss(w, np.zeros(2)).backward()
    opt.step()
    assert np.allclose(w.data, [0.4, -0.4])
    opt.zero_grad()
    assert w.grad is None


def test_no_grad_allocates_no_gradients():
    x = T(rng.standard_normal((1, 2, 4, 4)), grad=True)
    w = T(rng.standard_normal((3, 2, 3, 3)), grad=True)
    with nn.no_grad():
        out = nn.relu(nn.conv2d(x, w))
        assert not nn.grad_enabled()
    assert out._backward is None and out._parents == ()
    assert x.grad is None and w.grad is None
    assert nn.grad_enabled()


def test_backward_accumulates_through_shared_inputs():
    x = T([1.0, 2.0], grad=True)
    y = nn.add(x, x)
    y.backward(np.ones(2))
    assert x.grad.tolist() == [2.0, 2.0]


def test_linear_ops_have_exact_adjoints():
    x = rng.standard_normal((2, 3, 5, 4))
    w = rng.standard_normal((4, 3, 3, 3))
    g = rng.standard_normal((2, 4, 5, 4))
    xt = T(x, grad=True)
    nn.conv2d(xt, T(w)).backward(g)
    lhs = np.sum(nn.conv2d(T(x), T(w)).data * g)
    assert np.sum(x * xt.grad) == pytest.approx(lhs, rel=1e-6)


# finite-difference checks at both precisions

def _cases():
    r = np.random.default_rng(11)
    t = r.standard_normal((2, 3, 4, 4))
    return {
        "conv2d": (lambda x, w, b: nn.mse_loss(nn.conv2d(x, w, b), t),
                   [r.standard_normal((2, 2, 4, 4)), r.standard_normal((3, 2, 3, 3)), r.standard_normal(3)]),
        "conv_transpose2d": (lambda x, w: nn.mse_loss(nn.conv_transpose2d(x, w), np.zeros((2, 2, 4, 4))),
                             [r.standard_normal((2, 3, 2, 2)), r.standard_normal((3, 2, 2, 2))]),
        "maxpool2": (lambda x: nn.mse_loss(nn.maxpool2(x), np.zeros((2, 3, 2, 2))),
                     [r.permutation(96).reshape(2, 3, 4, 4) / 10.0]),
        "fully_connected": (lambda x, w, b: nn.mse_loss(nn.fully_connected(x, w, b), np.ones((4, 3))),
                            [r.standard_normal((4, 5)), r.standard_normal((3, 5)), r.standard_normal(3)]),
        "composition": (lambda x, w, v: nn.mse_loss(
            nn.fully_connected(nn.reshape(nn.relu(nn.conv2d(x, w)), (2, 48)), v), np.ones((2, 2))),
            [r.standard_normal((2, 2, 4, 4)), r.standard_normal((3, 2, 3, 3)), r.standard_normal((2, 48)) / 7]),
    }


@pytest.mark.parametrize("name", list(_cases()))
@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-5)])
def test_grad_check(name, dtype, tol):
    fn, inputs = _cases()[name]
    rep = nn.grad_check(fn, inputs, dtype=dtype)
    assert rep.passed(tol), rep


def test_grad_check_exact_for_linear_op():
    w = rng.standard_normal((3, 4))
    rep = nn.grad_check(lambda x: nn.global_avg_pool(nn.reshape(nn.fully_connected(x, T(w)), (1, 1, 2, 3))),
                        [rng.standard_normal((2, 4))])
    assert rep.max_rel_error < 1e-6


def test_grad_check_catches_wrong_gradient():
    def bad_square(x):
        out = nn.tensor.make_result(x.data ** 2, [x], lambda g: x.accumulate(g * x.data))
        return nn.global_avg_pool(nn.reshape(out, (1, 1, 2, 2)))

    assert not nn.grad_check(bad_square, [np.array([1.0, 2.0, 3.0, 4.0])]).passed(1e-2)


def test_forward_is_bit_reproducible_with_dropout():
    x = rng.standard_normal((2, 4, 3, 3)).astype(np.float32)
    w = rng.standard_normal((4, 4, 3, 3)).astype(np.float32)
    run = lambda: nn.channel_dropout(nn.conv2d(T(x, dtype=np.float32), T(w, dtype=np.float32)),
                                     0.3, True, key=(3, 9, 1)).data
    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    named = {"a.weight": rng.standard_normal((3, 2)).astype(np.float32), "a.bias": np.arange(3, dtype=np.float32)}
    path = tmp_path / "m.cewt"
    nn.save_checkpoint(path, named, step=17, extra={"note": "x"})
    got, header, state = nn.load_checkpoint(path)
    assert list(got) == list(named)
    for k in named:
        assert np.array_equal(got[k], named[k])
    assert header["step"] == 17 and header["extra"] == {"note": "x"}
    assert state is None
    raw = path.read_bytes()
    assert raw[:4] == b"CEWT" and raw[4] == 1


def test_checkpoint_with_optimizer_state(tmp_path):
    ws = [nn.parameter(np.ones((2, 2), dtype=np.float32)), nn.parameter(np.zeros(2, dtype=np.float32))]
    opt = nn.Adam(ws)
    for w in ws:
        w.grad = np.full(w.shape, 0.5, dtype=np.float32)
    opt.step()
    path = tmp_path / "o.cewt"
    nn.save_checkpoint(path, {"w": ws[0].data, "b": ws[1].data}, step=1, optimizer=opt.state)
    _, header, state = nn.load_checkpoint(path)
    assert header["optimizer_state"] is True
    assert state.step == 1
    assert np.allclose(state.m[0], opt.state.m[0]) and np.allclose(state.v[1], opt.state.v[1])


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + b"\x07" + b[5:],
    lambda b: b[:-3],
    lambda b: b + b"\x00",
])
def test_checkpoint_rejects_corruption(tmp_path, mutate):
    path = tmp_path / "c.cewt"
    nn.save_checkpoint(path, {"w": np.ones(4, dtype=np.float32)})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(path)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
def test_conv2d_matches_oracle_for_random_shapes(b, cin, cout, h, w):
    r = np.random.default_rng(b * 100 + cin * 10 + cout + h * 7 + w)
    x, k, bias = r.standard_normal((b, cin, h, w)), r.standard_normal((cout, cin, 3, 3)), r.standard_normal(cout)
    assert np.allclose(nn.conv2d(T(x), T(k), T(bias)).data, nested_loop_conv2d(x, k, bias), atol=1e-12)
