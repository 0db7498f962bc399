import numpy as np
import pytest

from streamduct import tensor as T
from streamduct.tensor import Tensor, ShapeMismatchError, finite_difference_gradient


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return np.linalg.norm(a - b) / denom


def check_grad(f, x_data, tol=1e-5, h=1e-4):
    x = Tensor(x_data, requires_grad=True)
    loss = f(x)
    loss.backward()
    fd = finite_difference_gradient(f, x, h=h)
    assert x.grad is not None
    assert rel_err(x.grad, fd) < tol, "autodiff %r vs fd %r" % (x.grad, fd)


def test_add_elementwise():
    out = Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_cumulative_sum_values():
    out = T.cumulative_sum(Tensor([2.0, 4.0, 6.0]))
    np.testing.assert_array_equal(out.data, [2.0, 6.0, 12.0])


def test_cumsum_adjacent_diff_roundtrip():
    rng = np.random.default_rng(0)
    x = rng.normal(size=17)
    c = T.cumulative_sum(Tensor(x)).data
    recovered = np.diff(np.concatenate([[0.0], c]))
    assert np.max(np.abs(recovered - x)) < 1e-12


def test_stop_gradient_blocks_exactly():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = T.reduce_sum(T.stop_gradient(x) * x)
    y.backward()
    # d/dx of sg(x)*x is sg(x) only: gradient equals the values, not 2x.
    np.testing.assert_array_equal(x.grad, [1.0, 2.0])

    z = T.reduce_sum(T.stop_gradient(x * x))
    x.zero_grad()
    z.backward()
    assert x.grad is None


def test_backward_linear_map():
    x = Tensor([1.0, 2.0, 3.0])
    w = Tensor([0.5, -1.0, 2.0], requires_grad=True)
    loss = T.reduce_sum(x * w)
    loss.backward()
    np.testing.assert_array_equal(w.grad, [1.0, 2.0, 3.0])


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    (x**2).backward()
    assert abs(float(x.grad) - 6.0) < 1e-12


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (x * x).backward()


def test_shape_mismatch_error_names_op_and_shapes():
    with pytest.raises(ShapeMismatchError) as exc:
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "matmul" in str(exc.value)
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_elementwise_broadcast_mismatch():
    with pytest.raises(ShapeMismatchError):
        Tensor(np.ones((3, 2))) + Tensor(np.ones((4, 2)))


def test_diamond_graph_accumulates_once():
    x = Tensor(2.0, requires_grad=True)
    y = x * x + x * 3.0  # x appears on two paths
    y.backward()
    assert abs(float(x.grad) - 7.0) < 1e-12


def test_unrelated_tensor_gets_no_gradient():
    x = Tensor([1.0], requires_grad=True)
    other = Tensor([5.0], requires_grad=True)
    T.reduce_sum(x * 2.0).backward()
    assert other.grad is None


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(-20, 20, size=(6, 9)))
    y = T.softmax(x, axis=-1).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(-20, 20, size=(5, 7)))
    ls = T.log_softmax(x, axis=-1).data
    np.testing.assert_allclose(ls, np.log(T.softmax(x, axis=-1).data), atol=1e-9)


def test_masked_softmax_zeroes_masked_positions():
    x = Tensor(np.array([[0.0, 100.0, 1.0]]))
    mask = np.array([[True, False, True]])
    y = T.masked_softmax(x, mask).data
    assert y[0, 1] == 0.0
    np.testing.assert_allclose(y.sum(), 1.0, atol=1e-12)


def test_finite_difference_on_analytic_cases():
    fd = finite_difference_gradient(lambda t: t**2, Tensor(3.0))
    assert abs(float(fd) - 6.0) < 1e-6
    fd = finite_difference_gradient(lambda t: T.reduce_sum(t), Tensor(np.arange(5.0)))
    np.testing.assert_allclose(fd, np.ones(5), atol=1e-9)


@pytest.mark.parametrize(
    "name,f,shape",
    [
        ("add", lambda x: T.reduce_sum((x + Tensor(np.linspace(0, 1, 12).reshape(3, 4))) ** 2), (3, 4)),
        ("sub", lambda x: T.reduce_sum((x - 0.5) ** 2), (3, 4)),
        ("mul", lambda x: T.reduce_sum(x * x * 0.3), (3, 4)),
        ("div", lambda x: T.reduce_sum(x / Tensor(np.linspace(1, 2, 12).reshape(3, 4))), (3, 4)),
        ("exp", lambda x: T.reduce_sum(T.exp(x)), (6,)),
        ("log", lambda x: T.reduce_sum(T.log(x + 3.0)), (6,)),
        ("tanh", lambda x: T.reduce_sum(T.tanh(x) ** 2), (6,)),
        ("sigmoid", lambda x: T.reduce_sum(T.sigmoid(x) * 2.0), (6,)),
        ("relu", lambda x: T.reduce_sum(T.relu(x) ** 2), (11,)),
        ("swish", lambda x: T.reduce_sum(T.swish(x)), (7,)),
        ("softmax", lambda x: T.reduce_sum(T.softmax(x, axis=-1) ** 2), (4, 5)),
        ("log_softmax", lambda x: T.reduce_sum(T.log_softmax(x, axis=-1) * 0.1), (4, 5)),
        ("reduce_mean", lambda x: T.reduce_mean(x**2), (3, 5)),
        ("cumsum", lambda x: T.reduce_sum(T.cumulative_sum(x, axis=0) ** 2), (6, 2)),
        ("slice", lambda x: T.reduce_sum(x[1:4] ** 2), (6, 2)),
        ("concat", lambda x: T.reduce_sum(T.concat([x, x * 2.0], axis=0) ** 2), (3, 2)),
        ("transpose", lambda x: T.reduce_sum(T.transpose(x) ** 2), (3, 4)),
        ("reshape", lambda x: T.reduce_sum(T.reshape(x, (2, 6)) ** 2), (3, 4)),
        ("broadcast_to", lambda x: T.reduce_sum(T.broadcast_to(x, (5, 4)) ** 2), (1, 4)),
    ],
)
def test_gradient_matches_finite_differences(name, f, shape):
    rng = np.random.default_rng(hash(name) % 2**32)
    check_grad(f, rng.normal(size=shape))


def test_matmul_gradient():
    rng = np.random.default_rng(7)
    b = Tensor(rng.normal(size=(4, 3)))

    def f(x):
        return T.reduce_sum(T.matmul(x, b) ** 2)

    check_grad(f, rng.normal(size=(2, 4)))


def test_masked_softmax_gradient():
    rng = np.random.default_rng(8)
    mask = rng.random((4, 6)) > 0.3
    mask[:, 0] = True

    def f(x):
        return T.reduce_sum(T.masked_softmax(x, mask, axis=-1) ** 2)

    check_grad(f, rng.normal(size=(4, 6)))


def test_take_rows_gradient():
    rng = np.random.default_rng(9)
    ids = np.array([0, 2, 2, 1])

    def f(x):
        return T.reduce_sum(T.take_rows(x, ids) ** 2)

    check_grad(f, rng.normal(size=(3, 4)))


@pytest.mark.parametrize("stride,pl,pr", [(1, 1, 1), (1, 2, 0), (2, 1, 1)])
def test_conv1d_gradient(stride, pl, pr):
    rng = np.random.default_rng(10 + stride + pl)
    k = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)
    x_data = rng.normal(size=(6, 2))

    def f_x(x):
        return T.reduce_sum(T.conv1d(x, k, b, stride=stride, pad_left=pl, pad_right=pr) ** 2)

    check_grad(f_x, x_data)

    x = Tensor(x_data)

    def f_k(kk):
        return T.reduce_sum(T.conv1d(x, kk, b, stride=stride, pad_left=pl, pad_right=pr) ** 2)

    check_grad(f_k, k.data)

    def f_b(bb):
        return T.reduce_sum(T.conv1d(x, k, bb, stride=stride, pad_left=pl, pad_right=pr) ** 2)

    check_grad(f_b, b.data)


def test_depthwise_conv1d_gradient():
    rng = np.random.default_rng(13)
    k = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    x_data = rng.normal(size=(7, 4))

    def f_x(x):
        return T.reduce_sum(T.depthwise_conv1d(x, k, stride=1, pad_left=1, pad_right=1) ** 2)

    check_grad(f_x, x_data)

    x = Tensor(x_data)

    def f_k(kk):
        return T.reduce_sum(T.depthwise_conv1d(x, kk, stride=1, pad_left=1, pad_right=1) ** 2)

    check_grad(f_k, k.data)


def test_composed_graph_matches_finite_differences():
    rng = np.random.default_rng(14)
    w1 = Tensor(rng.normal(size=(5, 4)))
    w2 = Tensor(rng.normal(size=(4, 3)))

    def f(x):
        h = T.tanh(T.matmul(x, w1))
        y = T.softmax(T.matmul(h, w2), axis=-1)
        return T.reduce_sum(T.cumulative_sum(y, axis=0) ** 2)

    check_grad(f, rng.normal(size=(6, 5)))


def test_gradients_map_covers_missing_params():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([3.0], requires_grad=True)
    loss = T.reduce_sum(x * x)
    grads = T.gradients(loss, {"x": x, "unused": unused})
    np.testing.assert_array_equal(grads["x"], [2.0, 4.0])
    np.testing.assert_array_equal(grads["unused"], [0.0])
