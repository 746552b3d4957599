import numpy as np
import pytest
import scipy.sparse as sp

from gradcheck import check
from meshfield import autodiff as ad
from meshfield.autodiff import Parameter
from meshfield.errors import NonFinite, NonScalarRoot, ShapeMismatch

rng = np.random.default_rng(0)


def P(*shape, name="p", scale=1.0):
    return Parameter(rng.normal(size=shape) * scale, name)


def weighted(node):
    # a fixed random projection keeps every output entry in the loss
    w = np.random.default_rng(42).normal(size=node.shape)
    return ad.sum(ad.mul(node, w))


ELEMENTWISE = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
@pytest.mark.parametrize("shapes", [((4, 3), (4, 3)), ((4, 3), (3,)), ((4, 3), (1, 3)), ((4, 1), (4, 3))])
def test_elementwise_broadcasting(name, shapes):
    a, b = P(*shapes[0], name="a"), P(*shapes[1], name="b")
    check(lambda: weighted(ELEMENTWISE[name](a, b)), [a, b])


@pytest.mark.parametrize(
    "fn",
    [
        lambda x: ad.sin(x, 1.0),
        lambda x: ad.sin(x, 30.0),
        lambda x: ad.tanh(x),
        lambda x: ad.relu(x),
        lambda x: ad.transpose(x),
        lambda x: ad.sum(x, axis=0),
        lambda x: ad.sum(x, axis=1),
        lambda x: ad.mean(x),
        lambda x: ad.mean(x, axis=1),
        lambda x: ad.l2_norm(x, axis=1),
        lambda x: ad.dot(x, ad.sin(x), axis=1),
    ],
    ids=["sin", "sin30", "tanh", "relu", "transpose", "sum0", "sum1", "mean", "mean1", "l2norm", "dot"],
)
def test_unary(fn):
    x = P(5, 3, name="x")
    # keep relu inputs away from the kink
    x.value[np.abs(x.value) < 0.05] += 0.2
    check(lambda: weighted(fn(x)), [x])


def test_matmul_dense_and_vector():
    a, b, v = P(4, 3, name="a"), P(3, 5, name="b"), P(3, name="v")
    check(lambda: weighted(ad.matmul(a, b)), [a, b])
    check(lambda: weighted(ad.matmul(a, v)), [a, v])


def test_matmul_sparse_left():
    S = sp.random(6, 4, density=0.5, random_state=1, format="csr")
    x = P(4, 2, name="x")
    check(lambda: weighted(ad.matmul(S, x)), [x])
    np.testing.assert_allclose(ad.matmul(S, x).value, S.toarray() @ x.value)


def test_concat():
    a, b = P(3, 2, name="a"), P(3, 4, name="b")
    check(lambda: weighted(ad.concat([a, b], axis=1)), [a, b])
    check(lambda: weighted(ad.concat([ad.transpose(a), ad.transpose(b)], axis=0)), [a, b])


def test_exp_scale():
    c, t = P(6, 3, name="c"), P(3, name="t")
    lam = np.linspace(0, 5, 6)
    check(lambda: weighted(ad.exp_scale(c, lam, t)), [c, t])


def test_exp_scale_closed_form_derivative():
    # d/dt_hat exp(-1 * softplus(0)) = -exp(-ln 2) * sigmoid(0) = -1/4
    c = Parameter(np.ones((1, 1)), "c")
    t = Parameter(np.zeros(1), "t")
    ad.backward(ad.sum(ad.exp_scale(c, np.array([1.0]), t)))
    np.testing.assert_allclose(t.grad, [-0.25], atol=1e-15)


def test_shared_subexpression_accumulates():
    x = Parameter(np.array([1.5, -0.5]), "x")
    y = ad.mul(x, x)
    z = ad.sum(ad.add(y, ad.mul(y, 3.0)))  # 4 x^2
    ad.backward(z)
    np.testing.assert_allclose(x.grad, 8 * x.value)


def test_diamond_graph():
    x = P(3, name="x")

    def f():
        s = ad.sin(x)
        return ad.sum(ad.mul(ad.tanh(s), ad.add(s, x)))

    check(f, [x])


def test_unused_parameter_gets_zero_grad():
    x, unused = P(3, name="x"), P(2, name="u")
    ad.backward(ad.sum(ad.mul(x, x)))
    assert np.all(unused.grad == 0)


def test_frozen_parameter():
    x = P(3, name="x")
    x.trainable = False
    ad.backward(ad.sum(ad.mul(x, x)))
    assert np.all(x.grad == 0)


def test_gradients_accumulate_until_zeroed():
    x = Parameter(np.array([2.0]), "x")
    for _ in range(2):
        ad.backward(ad.sum(ad.mul(x, x)))
    np.testing.assert_allclose(x.grad, [8.0])
    x.zero_grad()
    assert x.grad[0] == 0


def test_non_scalar_root():
    with pytest.raises(NonScalarRoot):
        ad.backward(ad.mul(P(3), 2.0))


def test_non_finite_detected():
    with pytest.raises(NonFinite) as info, np.errstate(divide="ignore"):
        ad.div(Parameter(np.array([1.0]), "x"), np.array([0.0]))
    assert info.value.op == "div"


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.add(P(3, 2), P(4, 2))
    with pytest.raises(ShapeMismatch):
        ad.matmul(P(3, 2), P(3, 2))


def test_deep_chain_no_recursion_limit():
    x = Parameter(np.array([0.1]), "x")
    y = x
    for _ in range(5000):
        y = ad.add(y, 0.0)
    ad.backward(ad.sum(y))
    assert x.grad[0] == 1.0


def test_operator_sugar():
    a, b = P(3, name="a"), P(3, name="b")
    check(lambda: ad.sum(a * b - a / (b * b + 1.0) + 2.0 - (-a)), [a, b])
