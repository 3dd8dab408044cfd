import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfd import autodiff as ad
from tfd.autodiff import ParamStore, Tensor, load_checkpoint, save_checkpoint
from tfd.gradcheck import check_function, check_op, op_cases, rel_error
from tfd.rng import Rng


def correlate_reference(x, w, b, stride, pad):
    """Explicit loops over every output position."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    patch = xp[i, :, y * stride : y * stride + k, xx * stride : xx * stride + k]
                    out[i, o, y, xx] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("stride, k", [(1, 3), (2, 3), (1, 1), (2, 1), (1, 5)])
def test_conv2d_matches_loops(stride, k):
    r = Rng(stride * 10 + k)
    x, w, b = r.normal((2, 3, 7, 6)), r.normal((4, 3, k, k)), r.normal((4,))
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride)
    ref = correlate_reference(x, w, b, stride, (k - 1) // 2)
    assert np.max(np.abs(out.data - ref)) < 1e-12


def test_conv2d_hand_example():
    out = ad.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), pad=1)
    assert out.data[0, 0, 1, 1] == 9
    assert out.data[0, 0, 0, 0] == out.data[0, 0, 2, 2] == 4


def test_conv2d_identity_and_errors():
    x = Rng(0).normal((2, 3, 4, 4))
    assert np.array_equal(ad.conv2d(Tensor(x), Tensor(np.eye(3)[:, :, None, None])).data, x)
    with pytest.raises(ad.ShapeError, match=r"\(2, 3, 4, 4\).*\(4, 2, 3, 3\)"):
        ad.conv2d(Tensor(x), Tensor(np.zeros((4, 2, 3, 3))))


def test_single_weight_gradient_matches_fd():
    x = Tensor(Rng(1).normal((1, 2, 5, 5)))
    w = Tensor(Rng(2).normal((3, 2, 3, 3)), requires_grad=True)
    res = check_function("conv-weight", lambda: ad.sum_all(ad.conv2d(x, w)), [w], coords=54)
    assert res.ok


def test_depthwise_identity_and_zero_kernel():
    x = Rng(3).normal((2, 2, 5, 5))
    k = np.zeros((2, 1, 3, 3))
    k[:, 0, 1, 1] = 1
    assert np.array_equal(ad.depthwise_conv2d(Tensor(x), Tensor(k)).data, x)
    k[0] = 0
    out = ad.depthwise_conv2d(Tensor(x), Tensor(k)).data
    assert np.all(out[:, 0] == 0) and np.array_equal(out[:, 1], x[:, 1])
    with pytest.raises(ad.ShapeError):
        ad.depthwise_conv2d(Tensor(x), Tensor(np.zeros((3, 1, 3, 3))))


def test_layer_norm_examples():
    beta = np.array([0.5, -1.0])
    out = ad.layer_norm(Tensor(np.full((1, 2, 3, 3), 4.0)), Tensor(np.ones(2)), Tensor(beta))
    assert np.allclose(out.data, beta[None, :, None, None])
    x = 5 + 2 * Rng(4).normal((3, 4, 8, 8))
    y = ad.layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.allclose(y.mean(axis=(1, 2, 3)), 0, atol=1e-12)
    assert np.allclose(y.var(axis=(1, 2, 3)), 1, atol=1e-6)


def test_channel_attention_examples():
    x = Rng(5).normal((2, 4, 3, 3))
    half = ad.channel_attention(Tensor(x), Tensor(np.zeros((1, 4))), Tensor(np.zeros((4, 1))))
    assert np.allclose(half.data, x / 2, atol=1e-15)
    # positive input keeps the hidden unit active; huge w2 saturates the gate
    x_pos = np.abs(x) + 1
    full = ad.channel_attention(Tensor(x_pos), Tensor(np.ones((1, 4))), Tensor(np.full((4, 1), 1e3)))
    assert np.max(np.abs(full.data - x_pos)) < 1e-6
    with pytest.raises(ad.ShapeError):
        ad.channel_attention(Tensor(x), Tensor(np.zeros((1, 4))), Tensor(np.zeros((3, 1))))


def test_elementwise_examples():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]
    assert ad.sigmoid(Tensor([0.0])).item() == 0.5
    s = ad.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(s)) and s[0] == 0.0 and s[1] == 1.0
    assert ad.elementwise("abs", Tensor([-2.0])).item() == 2.0
    with pytest.raises(ad.ShapeError):
        ad.elementwise("add", Tensor([1.0]), Tensor([1.0, 2.0]))


def test_relu_subgradient_zero_at_zero():
    x = Tensor(np.zeros(3), requires_grad=True)
    with ad.Tape():
        ad.backward(ad.sum_all(ad.relu(x)))
    assert np.all(x.grad == 0)


def test_gap_examples():
    assert ad.gap(Tensor(np.full((1, 1, 3, 3), 7.0))).data.item() == 7.0
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), requires_grad=True)
    with ad.Tape():
        g = ad.gap(x)
        ad.backward(ad.sum_all(g))
    assert g.data.item() == 2.5
    assert np.allclose(x.grad, 0.25)


def test_backward_basics():
    x = Tensor([3.0], requires_grad=True)
    p = Tensor([1.0], requires_grad=True)
    with ad.Tape():
        ad.backward(ad.sum_all(ad.mul(x, x)))
    assert x.grad.item() == 6.0 and p.grad.item() == 0.0


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.Tape():
        y = ad.scale(x, 2.0)
        with pytest.raises(ad.ShapeError):
            ad.backward(y)


def test_backward_after_tape_closed():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.Tape():
        y = ad.sum_all(ad.scale(x, 2.0))
    with pytest.raises(RuntimeError):
        ad.backward(y)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape, ad.no_grad():
        ad.sum_all(ad.mul(x, x))
        assert tape.nodes == []


@pytest.mark.parametrize("case", op_cases(), ids=lambda c: c[0])
def test_op_gradients(case):
    name, fn, inputs = case
    res = check_op(name, fn, inputs)
    assert res.coords >= 100 or res.coords == sum(np.size(i) for i in inputs)
    assert res.ok, res


def test_every_case_samples_100_coordinates():
    for name, fn, inputs in op_cases():
        assert sum(np.size(i) for i in inputs) >= 100, name


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ops_do_not_mutate_inputs(seed):
    for name, fn, inputs in op_cases(seed):
        tensors = [Tensor(np.array(x), requires_grad=True) for x in inputs]
        before = [t.data.copy() for t in tensors]
        with ad.Tape():
            fn(*tensors)
        assert all(np.array_equal(a, t.data) for a, t in zip(before, tensors)), name


def test_backward_linearity():
    r = Rng(11)
    x = Tensor(r.normal((2, 3, 5, 5)), requires_grad=True)
    w = Tensor(r.normal((2, 3, 3, 3)), requires_grad=True)

    def grads(a, b):
        x.grad[...] = 0
        w.grad[...] = 0
        with ad.Tape():
            y = ad.conv2d(x, w)
            l1 = ad.sum_all(ad.square(y))
            l2 = ad.mean_all(ad.sigmoid(y))
            ad.backward(ad.add(ad.scale(l1, a), ad.scale(l2, b)))
        return x.grad.copy(), w.grad.copy()

    g1, g2, g = grads(1.0, 0.0), grads(0.0, 1.0), grads(0.7, -2.5)
    for a, b, c in zip(g1, g2, g):
        assert np.allclose(c, 0.7 * a - 2.5 * b, rtol=1e-12, atol=1e-12)


def test_backward_deterministic():
    def run():
        r = Rng(12)
        x = Tensor(r.normal((2, 3, 6, 6)), requires_grad=True)
        w = Tensor(r.normal((4, 3, 3, 3)), requires_grad=True)
        with ad.Tape():
            ad.backward(ad.sum_all(ad.relu(ad.conv2d(x, w))))
        return x.grad, w.grad

    a, b = run(), run()
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_rel_error_floor():
    assert rel_error(1e-12, 0.0) == 0.0
    assert rel_error(1.0, 1.0001) == pytest.approx(1e-4 / 1.0001)


def test_paramstore_zero_grad_and_count():
    ps = ParamStore()
    a = ps.add("m.a", np.ones((2, 3)))
    ps.add("n.b", np.ones(4))
    a.grad += 3
    ps.zero_grad()
    assert np.all(a.grad == 0)
    assert ps.count() == 10 and ps.count("m.") == 6
    with pytest.raises(KeyError):
        ps.add("m.a", np.ones(1))


@given(st.lists(st.tuples(st.text("abcxyz._", min_size=1, max_size=8), st.lists(st.integers(1, 4), max_size=3)), max_size=5, unique_by=lambda t: t[0]))
@settings(max_examples=30, deadline=None)
def test_checkpoint_roundtrip(tmp_path_factory, entries):
    state = {name: Rng(len(name)).normal(tuple(shape)) for name, shape in entries}
    path = tmp_path_factory.mktemp("ck") / "m.tfd1"
    save_checkpoint(state, path)
    back = load_checkpoint(path)
    assert list(back) == list(state)
    for k in state:
        assert back[k].shape == np.shape(state[k]) and np.array_equal(back[k], state[k])


def test_checkpoint_layout_and_truncation(tmp_path):
    path = tmp_path / "m.tfd1"
    save_checkpoint({"w": np.array([[1.0, 2.0]])}, path)
    blob = path.read_bytes()
    expected = b"TFD1" + (1).to_bytes(4, "little") + b"w" + (2).to_bytes(4, "little")
    expected += (1).to_bytes(8, "little") + (2).to_bytes(8, "little") + np.array([1.0, 2.0], "<f8").tobytes()
    assert blob == expected
    path.write_bytes(blob[:-3])
    with pytest.raises(ValueError):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_check_catches_wrong_gradient():
    x = Tensor(Rng(13).normal((120,)), requires_grad=True)
    # the second factor is a detached copy: tape gradient x, true gradient 2x
    res = check_function("detached", lambda: ad.sum_all(ad.mul(x, Tensor(x.data.copy()))), [x])
    assert not res.ok and res.max_rel > 0.3


def test_check_redraws_kinked_coordinates():
    # entries within one step of the kink give a meaningless difference quotient
    x = Tensor(np.concatenate([np.full(40, 3e-6), Rng(14).normal((150,)) + 3]), requires_grad=True)
    res = check_function("abs-near-zero", lambda: ad.sum_all(ad.absolute(x)), [x], coords=100)
    assert res.ok and res.coords == 100 and res.skipped > 0
