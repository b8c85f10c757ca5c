import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dialmat import tensor as T
from dialmat.gradcheck import check_gradients, numerical_grad
from dialmat.tensor import ShapeError


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _scalarize(out, seed=123):
    w = np.random.default_rng(seed).normal(size=out.shape)
    return (out * w).sum()


# name -> (make inputs from rng, function of the input tensors)
PRIMITIVES = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b),
    "sub": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 1))], lambda a, b: a - b),
    "mul": (lambda r: [r.normal(size=(3, 1, 2)), r.normal(size=(4, 2))], lambda a, b: a * b),
    "div": (lambda r: [r.normal(size=(3, 2)), 1.5 + r.random((3, 2))], lambda a, b: a / b),
    "power": (lambda r: [0.5 + r.random((4,))], lambda a: T.power(a, 2.5)),
    "exp": (lambda r: [r.normal(size=(2, 3))], T.exp),
    "log": (lambda r: [0.3 + r.random((5,))], T.log),
    "sqrt": (lambda r: [0.3 + r.random((5,))], T.sqrt),
    "tanh": (lambda r: [r.normal(size=(3, 3))], T.tanh),
    "sigmoid": (lambda r: [r.normal(size=(3, 3))], T.sigmoid),
    "relu": (lambda r: [_away_from_zero(r, (4, 3))], T.relu),
    "gelu": (lambda r: [r.normal(size=(4, 3))], T.gelu),
    "sum_axis": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: T.tsum(a, axis=1)),
    "mean_keepdims": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: T.mean(a, axis=-1, keepdims=True)),
    "reshape": (lambda r: [r.normal(size=(2, 6))], lambda a: T.reshape(a, (3, 4))),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: T.transpose(a, (2, 0, 1))),
    "slice": (lambda r: [r.normal(size=(4, 5))], lambda a: a[1:3, ::2]),
    "gather": (lambda r: [r.normal(size=(4, 3))], lambda a: a[np.array([0, 2, 2, 3])]),
    "pad": (lambda r: [r.normal(size=(2, 3))], lambda a: T.pad(a, ((1, 0), (2, 1)))),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))],
               lambda a, b: T.concat([a, b], axis=1)),
    "stack": (lambda r: [r.normal(size=(3,)), r.normal(size=(3,))], lambda a, b: T.stack([a, b], axis=0)),
    "matmul_2d": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))], T.matmul),
    "matmul_nd_2d": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))], T.matmul),
    "matmul_batched": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 2))], T.matmul),
    "softmax": (lambda r: [r.normal(size=(3, 5))], lambda a: T.softmax(a, axis=-1)),
    "log_softmax": (lambda r: [r.normal(size=(3, 5))], lambda a: T.log_softmax(a, axis=-1)),
    "layer_norm": (lambda r: [r.normal(size=(3, 6)), r.normal(size=(6,)), r.normal(size=(6,))],
                   lambda x, g, b: T.layer_norm(x, g, b)),
    "embed": (lambda r: [r.normal(size=(6, 3))], lambda t: T.embed(t, np.array([[0, 5, 5], [2, 0, 1]]))),
    "cross_entropy": (lambda r: [r.normal(size=(4, 5))], lambda a: T.cross_entropy(a, [0, 4, 2, 2])),
    "cross_entropy_weighted": (lambda r: [r.normal(size=(3, 4))],
                               lambda a: T.cross_entropy(a, [1, 0, 3], weights=np.array([1.0, 0.0, 1.0]))),
}


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name, seed):
    make, fn = PRIMITIVES[name]
    inputs = make(np.random.default_rng(seed))
    check_gradients(lambda *xs: _scalarize(fn(*xs)), inputs, h=1e-5, rtol=1e-4)


def test_composite_graph_with_shared_subexpression():
    def fn(x, w):
        h = T.tanh(T.matmul(x, w))
        return (h * h + h).sum() + T.log_softmax(h, axis=-1).mean()

    r = np.random.default_rng(7)
    check_gradients(fn, [r.normal(size=(3, 4)), r.normal(size=(4, 4))])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
def test_matmul_gradients_any_shape(m, k, n, seed):
    r = np.random.default_rng(seed)
    check_gradients(lambda a, b: _scalarize(a @ b), [r.normal(size=(m, k)), r.normal(size=(k, n))])


def test_leaf_gradients_accumulate_across_backward_calls():
    x = T.parameter(np.array([1.0, 2.0]))
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_zero_grad_then_backward_twice_is_identical():
    rng = np.random.default_rng(0)
    a, b = T.parameter(rng.normal(size=(3, 4))), T.parameter(rng.normal(size=(4, 2)))
    grads = []
    for _ in range(2):
        a.zero_grad()
        b.zero_grad()
        T.backward(T.log_softmax(T.matmul(a, b)).sum() * T.tanh(a).mean())
        grads.append((a.grad.copy(), b.grad.copy()))
    for g1, g2 in zip(*grads):
        np.testing.assert_array_equal(g1, g2)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError):
        T.matmul(T.tensor(np.ones(4)), T.tensor(np.ones((4, 3))))


def test_backward_requires_scalar():
    x = T.parameter(np.ones(3))
    with pytest.raises(ShapeError):
        T.backward(x * 2.0)


def test_backward_inside_no_grad_is_rejected():
    x = T.parameter(np.ones(3))
    with T.no_grad():
        y = (x * 2.0).sum()
        assert not y.requires_grad
        with pytest.raises(ValueError):
            T.backward(y)


def test_embed_out_of_range():
    with pytest.raises(IndexError):
        T.embed(T.parameter(np.zeros((3, 2))), np.array([3]))


def test_concat_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        T.concat([])
    with pytest.raises(ShapeError):
        T.concat([T.tensor(np.ones((2, 3))), T.tensor(np.ones((3, 3)))], axis=1)


def test_item_of_non_scalar_raises():
    with pytest.raises(ShapeError):
        T.tensor(np.ones(2)).item()


def test_no_grad_is_thread_local():
    import threading

    seen = []
    with T.no_grad():
        t = threading.Thread(target=lambda: seen.append(T.grad_enabled()))
        t.start()
        t.join()
        assert not T.grad_enabled()
    assert seen == [True]
    assert T.grad_enabled()


def test_numerical_grad_restores_input():
    x = np.array([1.0, -2.0, 3.0])
    before = x.copy()
    g = numerical_grad(lambda: float(np.sum(x ** 2)), x)
    np.testing.assert_array_equal(x, before)
    np.testing.assert_allclose(g, 2 * before, rtol=1e-8)


def test_softmax_is_shift_invariant_and_stable():
    x = np.array([[1000.0, 1001.0, 1002.0]])
    p = T.softmax(T.tensor(x)).data
    np.testing.assert_allclose(p, T.softmax(T.tensor(x - 1000.0)).data)
    assert np.all(np.isfinite(T.log_softmax(T.tensor(x)).data))
