import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmner import autodiff as ad
from mmner.autodiff import Adam, SGD, Module, Parameter, Tensor, check_gradients
from mmner.errors import ContractError, NumericDomainError, ShapeError
from mmner.oracles import naive_conv1d, naive_matmul, naive_maxpool1d, softmax_mp


def weighted(out, seed=0):
    w = np.random.default_rng(seed).normal(size=out.shape)
    return ad.tsum(out * w)


UNARY = {
    "exp": (ad.exp, np.exp, lambda r: r.normal(size=(3, 4))),
    "log": (ad.log, np.log, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "sqrt": (ad.sqrt, np.sqrt, lambda r: r.uniform(0.5, 2.0, size=(3, 4))),
    "tanh": (ad.tanh, np.tanh, lambda r: r.normal(size=(3, 4))),
    "sigmoid": (ad.sigmoid, lambda x: 1 / (1 + np.exp(-x)), lambda r: r.normal(size=(3, 4))),
    "sin": (ad.sin, np.sin, lambda r: r.normal(size=(3, 4))),
    "cos": (ad.cos, np.cos, lambda r: r.normal(size=(3, 4))),
    "neg": (ad.neg, np.negative, lambda r: r.normal(size=(3, 4))),
    "relu": (ad.relu, lambda x: np.maximum(x, 0), lambda r: r.normal(size=(3, 4)) + 0.05),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_values_and_gradients(name, rng):
    op, ref, sample = UNARY[name]
    x = Tensor(sample(rng), requires_grad=True)
    np.testing.assert_allclose(op(x).data, ref(x.data), rtol=1e-12)
    assert check_gradients(lambda: weighted(op(x)), [x]) < 1e-7


@pytest.mark.parametrize("op", [ad.add, ad.sub, ad.mul, ad.div])
def test_binary_broadcast_gradients(op, rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(0.5, 1.5, size=(3, 1)), requires_grad=True)
    assert op(a, b).shape == (2, 3, 4)
    assert check_gradients(lambda: weighted(op(a, b)), [a, b]) < 1e-7
    assert b.grad.shape == (3, 1)


@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.integers(0, 2**31))
def test_unbroadcast_sums_to_parameter_shape(shape, seed):
    rng = np.random.default_rng(seed)
    big = tuple([2] + shape)
    small = tuple(1 if i % 2 else s for i, s in enumerate(shape))
    a = Tensor(rng.normal(size=big), requires_grad=True)
    b = Tensor(rng.normal(size=small), requires_grad=True)
    ad.tsum(a * b).backward()
    expected = np.broadcast_to(a.data, big).sum(axis=0)
    for axis, s in enumerate(small):
        if s == 1:
            expected = expected.sum(axis=axis, keepdims=True)
    np.testing.assert_allclose(b.grad, expected.reshape(small), rtol=1e-10, atol=1e-12)


def test_power_where_and_reductions(rng):
    x = Tensor(rng.uniform(0.5, 2, size=(3, 4)), requires_grad=True)
    y = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    cond = rng.random((3, 4)) > 0.5
    cases = [
        (lambda: weighted(ad.power(x, 2.5)), [x]),
        (lambda: weighted(ad.where(cond, x, y)), [x, y]),
        (lambda: weighted(ad.mean(x * y, axis=0)), [x, y]),
        (lambda: weighted(ad.logsumexp(x * y, axis=-1)), [x, y]),
        (lambda: weighted(ad.log_softmax(x * y, axis=0)), [x, y]),
        (lambda: weighted(ad.transpose(x, (1, 0))), [x]),
        (lambda: weighted(ad.reshape(x, (2, 6))), [x]),
        (lambda: weighted(ad.getitem(x, (slice(None), [0, 0, 2]))), [x]),
        (lambda: weighted(ad.concat([x, y], axis=1)), [x, y]),
        (lambda: weighted(ad.stack([x, y], axis=0)), [x, y]),
    ]
    for fn, tensors in cases:
        assert check_gradients(fn, tensors) < 1e-7


def test_matmul_matches_naive_loops(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(ad.matmul(a, b).data, naive_matmul(a, b), rtol=1e-12)
    A = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
    B = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    assert check_gradients(lambda: weighted(ad.matmul(A, B)), [A, B]) < 1e-7


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


@pytest.mark.parametrize("ks", [1, 2, 3, 4])
@pytest.mark.parametrize("padding", ["same", "valid"])
def test_conv1d_matches_sliding_window(ks, padding, rng):
    x, w = rng.normal(size=(7, 3)), rng.normal(size=(ks, 3, 2))
    got = ad.conv1d(x, w, padding=padding).data
    np.testing.assert_allclose(got, naive_conv1d(x, w, padding), rtol=1e-12, atol=1e-12)
    if padding == "same":
        assert got.shape[0] == 7


@pytest.mark.parametrize("length", [1, 4, 5, 40])
def test_maxpool_ceil_mode_matches_naive(length, rng):
    x = rng.normal(size=(length, 3))
    got = ad.maxpool1d(x, 2).data
    assert got.shape[0] == -(-length // 2)
    np.testing.assert_array_equal(got, naive_maxpool1d(x, 2))


def test_maxpool_routes_gradient_to_first_maximum():
    x = Tensor(np.array([[1.0], [1.0], [0.0], [2.0]]), requires_grad=True)
    ad.tsum(ad.maxpool1d(x, 2)).backward()
    np.testing.assert_array_equal(x.grad.ravel(), [1, 0, 0, 1])


def test_softmax_matches_extended_precision(rng):
    for _ in range(20):
        v = rng.normal(size=7) * 30
        np.testing.assert_allclose(ad.softmax(v).data, softmax_mp(v), rtol=1e-12, atol=1e-300)


def test_softmax_is_stable_for_large_inputs():
    out = ad.softmax(np.array([1000.0, 1000.0, -1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0])


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericDomainError):
        ad.softmax(np.array([np.inf, 0.0]))


def test_domain_errors():
    with pytest.raises(NumericDomainError):
        ad.log(np.array([1.0, 0.0]))
    with pytest.raises(NumericDomainError):
        ad.div(np.ones(2), np.array([1.0, 0.0]))


def test_backward_requires_scalar_connected_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        (x * 2).backward()
    with pytest.raises(ContractError, match="connected"):
        Tensor(np.ones(())).backward()


def test_backward_visits_each_node_once():
    x = Tensor(np.array(1.5), requires_grad=True)
    a = x * x              # diamond: x feeds a, b, and c twice over
    b = ad.exp(x)
    c = a * b + a
    visits = c.backward()
    nodes = {id(t) for t in (x, a, b, c)} | {id(p) for p in c._parents}
    assert visits == len(nodes) == Tensor.last_backward_visits
    v = 1.5
    assert x.grad == pytest.approx(2 * v * np.exp(v) + v * v * np.exp(v) + 2 * v, rel=1e-12)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.tsum(x * 3).backward()
    ad.tsum(x * 3).backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = x * 2
        assert not ad.is_grad_enabled()
    assert not y.requires_grad and y._parents == ()
    assert ad.is_grad_enabled()


def test_embedding_gradient_accumulates_repeated_ids(rng):
    w = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    ad.tsum(ad.embedding(w, np.array([[1, 1, 4]]))).backward()
    np.testing.assert_array_equal(w.grad[:, 0], [0, 2, 0, 0, 1])


def test_adam_first_step_moves_by_learning_rate():
    p = Parameter(np.array([1.0, -2.0]))
    opt = Adam([p], lr=0.1)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    # bias-corrected first step is lr * sign(g) up to eps
    np.testing.assert_allclose(p.data, [0.9, -1.9], rtol=1e-6)


def test_adam_matches_hand_recursion(rng):
    p = Parameter(rng.normal(size=3))
    opt = Adam([p], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    x, m, v = p.data.copy(), np.zeros(3), np.zeros(3)
    for t in range(1, 6):
        g = rng.normal(size=3)
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, x, rtol=1e-12)


def test_sgd_step():
    p = Parameter(np.array([1.0]))
    p.grad = np.array([2.0])
    SGD([p], lr=0.5).step()
    assert p.data[0] == 0.0


class _Net(Module):
    def __init__(self):
        self.w = Parameter(np.arange(6.0).reshape(2, 3))
        self.blocks = [Parameter(np.zeros(2)), Parameter(np.ones(1))]


def test_module_state_dict_round_trip():
    net = _Net()
    state = net.state_dict()
    assert set(state) == {"w", "blocks.0", "blocks.1"}
    assert net.num_parameters() == 9
    other = _Net()
    other.w.data[...] = 0
    other.load_state_dict(state)
    np.testing.assert_array_equal(other.w.data, net.w.data)
    with pytest.raises(Exception):
        other.load_state_dict({"w": state["w"]})
