import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coordgate_lab import ContractError, ShapeError, Tensor, backward, no_grad
from coordgate_lab.gradcheck import grad_check, numeric_grad
from coordgate_lab.tensor import (
    Tape, concat_channels, conv1d, conv2d, hadamard, index, matmul_channels, mse_loss, relu,
    resample2x, slice_channels, sum_all, using_tape,
)


def T(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def c1(x, k, b=0.0, padding="same_zero"):
    """conv1d on plain lists with one channel in and out."""
    x = Tensor(np.asarray(x, float)[None, :, None])
    k = Tensor(np.asarray(k, float)[:, None, None])
    with no_grad():
        return conv1d(x, k, Tensor([b]), padding).values[0, :, 0]


# --- conv1d / conv2d ---

def test_conv1d_hand_examples():
    np.testing.assert_array_equal(c1([1, 2, 3], [1, 0, -1]), [-2, -2, 2])
    np.testing.assert_array_equal(c1([1, 1, 1, 1], [1, 1, 1]), [2, 3, 3, 2])


def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).normal(size=17)
    np.testing.assert_array_equal(c1(x, [0, 1, 0]), x)


def test_conv1d_valid_length_and_definition():
    rng = np.random.default_rng(1)
    x, k = rng.normal(size=11), rng.normal(size=5)
    out = c1(x, k, 0.25, "valid")
    assert out.shape == (7,)
    ref = [sum(k[j] * x[i + j] for j in range(5)) + 0.25 for i in range(7)]
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-13)


def test_conv_rejects_bad_shapes():
    x = Tensor(np.zeros((1, 5, 2)))
    with pytest.raises(ShapeError):
        conv1d(x, Tensor(np.zeros((3, 3, 1))), Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        conv1d(x, Tensor(np.zeros((4, 2, 1))), Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 4, 4, 1))), Tensor(np.zeros((2, 3, 1, 1))), Tensor(np.zeros(1)))


def test_conv2d_ones_counts_taps():
    x = Tensor(np.ones((1, 12, 12, 1)))
    with no_grad():
        y = conv2d(x, Tensor(np.ones((3, 3, 1, 1))), Tensor(np.zeros(1))).values[0, :, :, 0]
    assert y[0, 0] == 4 and y[0, 5] == 6 and y[5, 5] == 9
    assert y[0, 5] / y[5, 5] == pytest.approx(2 / 3, abs=0)


def test_conv2d_center_kernel_is_identity():
    x = np.random.default_rng(2).normal(size=(2, 6, 7, 3))
    k = np.zeros((3, 3, 3, 3))
    k[1, 1] = np.eye(3)
    with no_grad():
        y = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(3))).values
    np.testing.assert_array_equal(y, x)


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(2, 5, 6, 3)), rng.normal(size=(3, 5, 3, 2)), rng.normal(size=2)
    with no_grad():
        y = conv2d(Tensor(x), Tensor(k), Tensor(b)).values
    xp = np.pad(x, ((0, 0), (1, 1), (2, 2), (0, 0)))
    ref = np.zeros_like(y)
    for i in range(5):
        for j in range(6):
            ref[:, i, j] = np.einsum("bhwc,hwcd->bd", xp[:, i:i + 3, j:j + 5], k) + b
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_valid_conv_commutes_with_shift():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 12, 12, 2))
    k, b = Tensor(rng.normal(size=(3, 3, 2, 1))), Tensor(rng.normal(size=1))
    with no_grad():
        y = conv2d(Tensor(x), k, b, "valid").values
        ys = conv2d(Tensor(x[:, 2:, 1:]), k, b, "valid").values
    np.testing.assert_array_equal(ys, y[:, 2:, 1:])


@pytest.mark.parametrize("layers", [1, 2, 3, 4])
def test_same_zero_defect_depth(layers):
    a = Tensor(np.ones((1, 12, 12, 1)))
    k, b = Tensor(np.full((3, 3, 1, 1), 0.5)), Tensor(np.zeros(1))
    with no_grad():
        for _ in range(layers):
            a = conv2d(a, k, b)
    v = a.values[0, :, :, 0]
    inner = v[layers:12 - layers, layers:12 - layers]
    assert np.all(inner == inner[0, 0])
    assert v[layers - 1, 6] != inner[0, 0]


# --- elementwise, channel ops ---

def test_hadamard_examples_and_grad():
    a, b = T([1, 2]), T([3, 4])
    y = hadamard(a, b)
    np.testing.assert_array_equal(y.values, [3, 8])
    backward(sum_all(y))
    np.testing.assert_array_equal(a.grad, [3, 4])
    np.testing.assert_array_equal(b.grad, [1, 2])
    a = T(np.arange(6.0).reshape(1, 2, 3))
    backward(sum_all(hadamard(a, Tensor(np.zeros((2, 3))))))
    assert np.all(a.grad == 0)


def test_hadamard_broadcasts_gate_over_batch():
    x = T(np.random.default_rng(5).normal(size=(3, 4, 5, 2)))
    g = T(np.random.default_rng(6).normal(size=(4, 5, 2)))
    backward(sum_all(hadamard(x, g)))
    np.testing.assert_allclose(g.grad, x.values.sum(axis=0))
    with pytest.raises(ShapeError):
        hadamard(x, Tensor(np.ones((4, 4, 2))))


def test_matmul_channels_examples():
    with no_grad():
        y = matmul_channels(Tensor([1.0, 2.0]), Tensor([[1.0], [1.0]]), Tensor([1.0]))
    assert y.values.tolist() == [4.0]
    x = np.random.default_rng(7).normal(size=(2, 4, 4, 3))
    with no_grad():
        y = matmul_channels(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).values
    np.testing.assert_array_equal(y, x)
    with pytest.raises(ShapeError):
        matmul_channels(Tensor(x), Tensor(np.eye(2)), Tensor(np.zeros(2)))


def test_matmul_channels_equals_1x1_conv():
    rng = np.random.default_rng(8)
    x, w, b = rng.normal(size=(2, 5, 6, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
    with no_grad():
        y1 = matmul_channels(Tensor(x), Tensor(w), Tensor(b)).values
        y2 = conv2d(Tensor(x), Tensor(w[None, None]), Tensor(b)).values
    assert np.max(np.abs(y1 - y2)) < 1e-12


def test_relu_examples():
    with no_grad():
        assert relu(Tensor([-1.0, 0.0, 2.0])).values.tolist() == [0, 0, 2]
    x = np.random.default_rng(9).normal(size=50)
    with no_grad():
        np.testing.assert_array_equal(relu(relu(Tensor(x))).values, relu(Tensor(x)).values)


def test_relu_grad_vs_finite_differences():
    rng = np.random.default_rng(10)
    v = rng.normal(size=40)
    v[np.abs(v) < 1e-3] = 0.5
    x = T(v)
    w = rng.normal(size=40)

    def f():
        return sum_all(hadamard(relu(x), Tensor(w)))

    backward(f())
    num = numeric_grad(f, x)
    np.testing.assert_allclose(x.grad, num, rtol=1e-6, atol=1e-9)
    np.testing.assert_array_equal(x.grad != 0, v > 0)


def test_resample_examples():
    with no_grad():
        d = resample2x(Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, :, :, None]), "down")
        u = resample2x(Tensor(np.array([[[[5.0]]]])), "up")
        c = Tensor(np.full((1, 4, 6, 2), 3.0))
        cc = resample2x(resample2x(c, "up"), "down")
    assert d.values.ravel().tolist() == [4.0]
    assert u.values.ravel().tolist() == [5.0] * 4
    np.testing.assert_array_equal(cc.values, c.values)
    with pytest.raises(ShapeError):
        resample2x(Tensor(np.zeros((1, 3, 4, 1))), "down")


def test_maxpool_ties_route_to_first_index():
    x = T(np.ones((1, 2, 2, 1)))
    backward(sum_all(resample2x(x, "down")))
    assert x.grad[0, :, :, 0].tolist() == [[1, 0], [0, 0]]


def test_concat_and_slice():
    rng = np.random.default_rng(11)
    a, b = T(rng.normal(size=(1, 4, 4, 3))), T(rng.normal(size=(1, 4, 4, 2)))
    y = concat_channels(a, b)
    assert y.shape == (1, 4, 4, 5)
    np.testing.assert_array_equal(slice_channels(y, 0, 3).values, a.values)
    np.testing.assert_array_equal(slice_channels(y, 3, 5).values, b.values)
    with pytest.raises(ShapeError):
        concat_channels(a, Tensor(np.zeros((1, 4, 3, 2))))


def test_concat_grad_splits():
    rng = np.random.default_rng(12)
    a, b = T(rng.normal(size=(2, 3, 3, 2))), T(rng.normal(size=(3, 3, 1)))
    w = Tensor(rng.normal(size=(2, 3, 3, 3)))
    rep = grad_check(lambda: sum_all(hadamard(concat_channels(a, b), w)), [a, b], tol=1e-8)
    assert rep.passed, rep


def test_mse_loss_examples():
    x = np.random.default_rng(13).normal(size=(3, 4))
    with no_grad():
        assert mse_loss(Tensor(x), Tensor(x)).item() == 0
        assert mse_loss(Tensor(x + 0.1), Tensor(x)).item() == pytest.approx(0.01, rel=1e-12)
    with pytest.raises(ShapeError):
        mse_loss(Tensor(x), Tensor(x.T))


def test_mse_grad_vs_finite_differences():
    rng = np.random.default_rng(14)
    p, t = T(rng.normal(size=(2, 5))), Tensor(rng.normal(size=(2, 5)))
    backward(mse_loss(p, t))
    np.testing.assert_allclose(p.grad, 2 * (p.values - t.values) / 10, rtol=1e-12)
    num = numeric_grad(lambda: mse_loss(p, t), p)
    np.testing.assert_allclose(p.grad, num, rtol=1e-6)


def test_index_scatter_grad():
    x = T(np.arange(5.0))
    backward(sum_all(index(x, np.array([0, 0, 3]))))
    assert x.grad.tolist() == [2, 0, 0, 1, 0]


# --- backward contract ---

def test_sum_of_squares_grad():
    x = T([1.0, -2.0, 3.0])
    backward(sum_all(hadamard(x, x)))
    np.testing.assert_array_equal(x.grad, [2, -4, 6])


def test_composite_conv_relu_mse_grad():
    rng = np.random.default_rng(15)
    x = Tensor(rng.normal(size=(1, 6, 6, 2)))
    k, b = T(rng.normal(size=(3, 3, 2, 3))), T(rng.normal(size=3))
    tgt = Tensor(rng.normal(size=(1, 6, 6, 3)))
    rep = grad_check(lambda: mse_loss(relu(conv2d(x, k, b)), tgt), [k, b], eps=1e-5, tol=1e-4)
    assert rep.passed, rep


def test_disconnected_parameter_grad_is_zero():
    x, unused = T([1.0, 2.0]), T([5.0])
    backward(sum_all(x))
    assert unused.grad.tolist() == [0.0]


def test_backward_contract_errors():
    x = T([1.0, 2.0])
    with pytest.raises(ContractError):
        backward(hadamard(x, x))
    loss = sum_all(hadamard(x, x))
    backward(loss)
    with pytest.raises(ContractError):
        backward(loss)
    with pytest.raises(ContractError):
        backward(Tensor(1.0))


def test_grads_accumulate_across_backwards():
    x = T([1.0, 2.0])
    backward(sum_all(x))
    backward(sum_all(x))
    assert x.grad.tolist() == [2.0, 2.0]


def test_tape_clear_releases_nodes():
    tape = Tape()
    with using_tape(tape):
        x = T([1.0])
        for _ in range(5):
            x = hadamard(x, x)
        loss = sum_all(x)
        assert len(tape) == 6
        tape.clear()
        assert len(tape) == 0
        with pytest.raises(ContractError):
            backward(loss)


def test_no_grad_records_nothing():
    x = T([1.0, 2.0])
    with no_grad():
        y = hadamard(x, x)
    assert y._node is None and not y.requires_grad


# --- grad_check harness ---

def test_grad_check_linear_is_machine_precision():
    rng = np.random.default_rng(16)
    x = Tensor(rng.normal(size=(4, 3)))
    w, b = T(rng.normal(size=(3, 2))), T(rng.normal(size=2))
    rep = grad_check(lambda: sum_all(matmul_channels(x, w, b)), [w, b], tol=1e-8)
    assert rep.max_error < 1e-9


def test_grad_check_catches_corrupted_gradient():
    rng = np.random.default_rng(17)
    w = T(rng.normal(size=(3, 2)))
    x = Tensor(rng.normal(size=(4, 3)))

    def f():
        return sum_all(matmul_channels(x, w, Tensor(np.zeros(2))))

    backward(f())
    bad = [w.grad * 1.01]
    rep = grad_check(f, [w], analytic=bad)
    assert not rep.passed


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 12), k=st.sampled_from([1, 3, 5]), cin=st.integers(1, 3), cout=st.integers(1, 3),
       seed=st.integers(0, 10_000))
def test_conv1d_grad_property(n, k, cin, cout, seed):
    rng = np.random.default_rng(seed)
    x = T(rng.normal(size=(2, n, cin)))
    w, b = T(rng.normal(size=(k, cin, cout))), T(rng.normal(size=cout))
    tgt = Tensor(rng.normal(size=(2, n, cout)))
    rep = grad_check(lambda: mse_loss(conv1d(x, w, b), tgt), [x, w, b], tol=1e-6)
    assert rep.passed, rep


@settings(max_examples=25, deadline=None)
@given(shape=st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 5), st.integers(1, 4)),
       seed=st.integers(0, 10_000))
def test_hadamard_commutes_and_gate_grad(shape, seed):
    rng = np.random.default_rng(seed)
    a, g = rng.normal(size=shape), rng.normal(size=shape[1:])
    with no_grad():
        y1 = hadamard(Tensor(a), Tensor(g)).values
        y2 = hadamard(Tensor(g * np.ones(shape)), Tensor(a)).values
    np.testing.assert_array_equal(y1, y2)
