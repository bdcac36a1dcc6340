import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asnet import tensor as T
from asnet.errors import ConfigError, DimensionError, InvariantError
from asnet.gradcheck import check_gradients
from asnet.tensor import Graph, Tensor


def test_tensor_upcasts_to_float64():
    t = Tensor(np.array([1, 2, 3], dtype=np.float32))
    assert t.data.dtype == np.float64
    assert Tensor([[1, 2], [3, 4]]).data.dtype == np.float64
    assert t.data.flags["C_CONTIGUOUS"]


def test_item_and_detach():
    t = Tensor([[3.5]], requires_grad=True)
    assert t.item() == 3.5
    d = t.detach()
    assert not d.requires_grad
    with pytest.raises(DimensionError):
        Tensor([1.0, 2.0]).item()


def test_matmul_exact_product():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal((a @ b).data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((2, 3)))
    with pytest.raises(DimensionError) as err:
        T.matmul(a, b)
    assert str((2, 3)) in str(err.value)


def test_matmul_backward_of_sum():
    rng = np.random.default_rng(0)
    a = T.make_param(rng.standard_normal((2, 3)))
    b = T.make_param(rng.standard_normal((3, 4)))
    with Graph() as g:
        loss = T.sum_all(a @ b)
    g.backward(loss)
    assert np.allclose(a.grad, np.ones((2, 4)) @ b.data.T, atol=1e-12)
    assert np.allclose(b.grad, a.data.T @ np.ones((2, 4)), atol=1e-12)


def test_matmul_vector_cases():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((3, 4))
    v = rng.standard_normal(4)
    assert np.allclose(T.matmul(Tensor(m), Tensor(v)).data, m @ v)
    w = rng.standard_normal(3)
    assert np.allclose(T.matmul(Tensor(w), Tensor(m)).data, w @ m)
    assert np.allclose(T.matmul(Tensor(v), Tensor(v)).data, v @ v)


def test_elementwise_backward_fd():
    rng = np.random.default_rng(2)
    x = T.make_param(rng.standard_normal(5))
    y = T.make_param(rng.standard_normal(5))

    def loss():
        z = T.add(T.mul(x, y), T.scale(x, 0.7))
        return T.sum_all(T.sub(z, T.scalar_affine(y, -2.0, 0.3)))

    assert check_gradients(loss, [x, y]) < 1e-4


def test_softmax_frozen_values():
    s = T.softmax(Tensor([0.0, math.log(2.0)]))
    assert np.allclose(s.data, [1.0 / 3.0, 2.0 / 3.0], atol=1e-15)
    rows = T.softmax(Tensor([[0.0, 0.0], [0.0, math.log(3.0)]]))
    assert np.allclose(rows.data, [[0.5, 0.5], [0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.floats(-100, 100))
def test_softmax_shift_invariance(vals, shift):
    x = np.array(vals)
    s1 = T.softmax(Tensor(x)).data
    s2 = T.softmax(Tensor(x + shift)).data
    assert abs(s1.sum() - 1.0) < 1e-12
    assert np.all(s1 > 0)
    assert np.allclose(s1, s2, atol=1e-12)


def test_softmax_large_inputs_stable():
    s = T.softmax(Tensor([1000.0, 1000.0, 0.0]))
    assert np.all(np.isfinite(s.data))
    assert np.allclose(s.data[:2], 0.5, atol=1e-12)


def test_softmax_backward_fd():
    rng = np.random.default_rng(3)
    x = T.make_param(rng.standard_normal(6))
    coef = Tensor(rng.standard_normal(6))

    def loss():
        return T.sum_all(T.mul(T.softmax(x), coef))

    assert check_gradients(loss, [x]) < 1e-4


def test_sigmoid_tanh_values_and_stability():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert T.sigmoid(Tensor([800.0])).data[0] == 1.0
    assert T.sigmoid(Tensor([-800.0])).data[0] == 0.0
    assert np.allclose(T.tanh(Tensor([0.5])).data, math.tanh(0.5), atol=1e-16)


def test_exp_log_and_grads():
    rng = np.random.default_rng(4)
    x = T.make_param(rng.random(4) + 0.5)

    def loss():
        return T.sum_all(T.log(T.exp(x)))

    assert check_gradients(loss, [x]) < 1e-4
    assert np.allclose(T.log(T.exp(x)).data, x.data, atol=1e-12)


def test_clamp_and_minimum():
    x = Tensor([-2.0, 0.5, 3.0])
    assert np.array_equal(T.clamp(x, 0.0, 1.0).data, [0.0, 0.5, 1.0])
    a, b = Tensor([1.0, 5.0]), Tensor([2.0, 4.0])
    assert np.array_equal(T.minimum(a, b).data, [1.0, 4.0])
    with pytest.raises(ConfigError):
        T.clamp(x, 2.0, 1.0)

    rng = np.random.default_rng(5)
    p = T.make_param(rng.standard_normal(6))
    q = T.make_param(rng.standard_normal(6))

    def loss():
        return T.sum_all(T.minimum(T.clamp(p, -0.5, 0.5), q))

    assert check_gradients(loss, [p, q]) < 1e-4


def test_mse_value_and_detached_target():
    pred = T.make_param([1.0, 2.0])
    target = T.make_param([0.0, 0.0])
    with Graph() as g:
        loss = T.mse(pred, target)
    assert loss.item() == 2.5
    g.backward(loss)
    assert np.allclose(pred.grad, [1.0, 2.0])
    assert np.array_equal(target.grad, [0.0, 0.0])


def test_categorical_entropy_and_log_prob():
    uniform = Tensor([0.25] * 4)
    assert abs(T.categorical_entropy(uniform).item() - math.log(4.0)) < 1e-12
    half = Tensor([0.5, 0.5, 0.0, 0.0])
    assert abs(T.categorical_entropy(half).item() - math.log(2.0)) < 1e-12

    p = T.make_param([0.2, 0.3, 0.5])
    with Graph() as g:
        lp = T.categorical_log_prob(p, 1)
    assert abs(lp.item() - math.log(0.3)) < 1e-12
    g.backward(lp)
    assert np.allclose(p.grad, [0.0, 1.0 / 0.3, 0.0])

    # zero probability: floored, finite, and with a finite gradient
    z = T.make_param([1.0, 0.0])
    with Graph() as g:
        lp = T.categorical_log_prob(z, 1)
    assert np.isfinite(lp.item())
    g.backward(lp)
    assert np.all(np.isfinite(z.grad))
    with pytest.raises(ConfigError):
        T.categorical_log_prob(p, 7)


def test_gumbel_frozen_zero_noise():
    logits = Tensor([[5.0, -5.0]])
    zero = np.zeros((1, 2))
    hard = T.gumbel_softmax_binary(logits, 1.0, hard=True, noise=zero)
    assert np.array_equal(hard.data, [[1.0, 0.0]])
    soft = T.gumbel_softmax_binary(logits, 1.0, hard=False, noise=zero)
    expect = np.array([math.exp(5.0), math.exp(-5.0)])
    expect /= expect.sum()
    assert np.allclose(soft.data, expect, atol=1e-15)


def test_gumbel_straight_through_grads_match_soft():
    rng = np.random.default_rng(6)
    noise = T.sample_gumbel(rng, (3, 2))
    grads = {}
    for mode in (True, False):
        logits = T.make_param(rng.standard_normal((3, 2)) * 0.0 + [[0.3, -0.2], [1.0, 0.9], [-2.0, 2.0]])
        coef = Tensor(np.arange(6.0).reshape(3, 2))
        with Graph() as g:
            y = T.gumbel_softmax_binary(logits, 0.7, hard=mode, noise=noise)
            loss = T.sum_all(T.mul(y, coef))
        g.backward(loss)
        grads[mode] = logits.grad.copy()
    assert np.array_equal(grads[True], grads[False])


def test_gumbel_soft_backward_fd():
    rng = np.random.default_rng(7)
    logits = T.make_param(rng.standard_normal((4, 2)))
    noise = T.sample_gumbel(rng, (4, 2))
    coef = Tensor(rng.standard_normal((4, 2)))

    def loss():
        y = T.gumbel_softmax_binary(logits, 0.9, hard=False, noise=noise)
        return T.sum_all(T.mul(y, coef))

    assert check_gradients(loss, [logits]) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 5.0))
def test_gumbel_hard_rows_one_hot(seed, temperature):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.standard_normal((5, 2)))
    y = T.gumbel_softmax_binary(logits, temperature, hard=True, noise=rng)
    assert np.all((y.data == 0.0) | (y.data == 1.0))
    assert np.array_equal(y.data.sum(axis=1), np.ones(5))


def test_gumbel_temperature_and_noise_validation():
    logits = Tensor(np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        T.gumbel_softmax_binary(logits, 0.0, noise=np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        T.gumbel_softmax_binary(logits, 1.0, noise=np.zeros((3, 2)))
    with pytest.raises(InvariantError):
        T.gumbel_softmax_binary(logits, 1.0)  # no graph, no noise


def test_graph_seed_reproducible():
    def run():
        with Graph(seed=7):
            logits = Tensor(np.linspace(-1, 1, 8).reshape(4, 2))
            return T.gumbel_softmax_binary(logits, 1.0, hard=False).data.copy()

    assert np.array_equal(run(), run())


def test_unused_parameter_has_exactly_zero_grad():
    used = T.make_param([1.0, 2.0])
    unused = T.make_param([3.0, 4.0])
    with Graph() as g:
        loss = T.sum_all(T.mul(used, used))
    g.backward(loss)
    assert np.array_equal(unused.grad, [0.0, 0.0])
    assert np.allclose(used.grad, 2.0 * used.data)


def test_dead_branch_is_skipped():
    x = T.make_param([1.0, -1.0])
    with Graph() as g:
        _aux = T.exp(T.scale(x, 100.0))  # never feeds the loss
        loss = T.sum_all(x)
    g.backward(loss)
    assert np.array_equal(x.grad, [1.0, 1.0])


def test_no_graph_means_no_tape():
    x = T.make_param([1.0, 2.0])
    out = T.sum_all(T.mul(x, x))
    assert not out.requires_grad
    with pytest.raises(InvariantError):
        T.backward(out)


def test_backward_requires_scalar_loss():
    x = T.make_param([1.0, 2.0])
    with Graph() as g:
        y = T.mul(x, x)
    with pytest.raises(DimensionError):
        g.backward(y)


def test_nested_graphs_record_separately():
    x = T.make_param([2.0])
    with Graph() as outer:
        T.mul(x, x)
        with Graph() as inner:
            T.scale(x, 3.0)
        assert len(inner.nodes) == 1
    assert len(outer.nodes) == 1


def test_second_backward_accumulates():
    x = T.make_param([3.0])
    with Graph() as g:
        loss = T.sum_all(T.mul(x, x))
    g.backward(loss)
    g.backward(loss)
    assert np.allclose(x.grad, [12.0])  # 2 * dloss/dx


def test_shape_helpers_values_and_grads():
    rng = np.random.default_rng(8)
    a = T.make_param(rng.standard_normal(3))
    b = T.make_param(rng.standard_normal(3))
    m = T.make_param(rng.standard_normal((3, 4)))

    stacked = T.stack_cols(a, b)
    assert stacked.data.shape == (3, 2)
    assert np.array_equal(stacked.data[:, 0], a.data)

    rows = T.stack_rows([a, b])
    assert np.array_equal(rows.data[1], b.data)

    cat = T.concat_vecs([a, b])
    assert np.array_equal(cat.data, np.concatenate([a.data, b.data]))

    assert np.array_equal(T.column(m, 2).data, m.data[:, 2])
    assert np.array_equal(T.slice_vec(a, 1, 3).data, a.data[1:3])
    assert np.array_equal(T.slice_cols(m, 0, 2).data, m.data[:, 0:2])
    assert np.array_equal(T.transpose(m).data, m.data.T)
    assert np.array_equal(T.mean_rows(m).data, m.data.mean(axis=0))

    coef_m = Tensor(rng.standard_normal((3, 4)))
    coef_v = Tensor(rng.standard_normal(6))

    def loss():
        pieces = [T.sum_all(T.mul(T.transpose(T.transpose(m)), coef_m)),
                  T.sum_all(T.mul(T.concat_vecs([a, b]), coef_v)),
                  T.sum_all(T.column(T.stack_cols(a, b), 1)),
                  T.sum_all(T.slice_cols(m, 1, 3)),
                  T.mean_all(T.stack_rows([a, b, a]))]
        return T.sum_all(T.stack_scalars(pieces))

    assert check_gradients(loss, [a, b, m]) < 1e-4


def test_only_and_reductions():
    x = T.make_param([[4.0]])
    with Graph() as g:
        s = T.only(x)
    assert s.data.shape == ()
    g.backward(s)
    assert np.array_equal(x.grad, [[1.0]])
    v = Tensor([1.0, 2.0, 3.0])
    assert T.mean_all(v).item() == 2.0
    assert T.sum_all(v).item() == 6.0
    with pytest.raises(DimensionError):
        T.only(Tensor([1.0, 2.0]))


def test_normalize_sum():
    x = T.make_param([1.0, 3.0])
    with Graph():
        y = T.normalize_sum(x)
    assert np.allclose(y.data, [0.25, 0.75], atol=1e-15)

    rng = np.random.default_rng(9)
    p = T.make_param(rng.random(4) + 0.5)
    coef = Tensor(rng.standard_normal(4))

    def loss():
        return T.sum_all(T.mul(T.normalize_sum(p), coef))

    assert check_gradients(loss, [p]) < 1e-4
    with pytest.raises(InvariantError):
        T.normalize_sum(Tensor([1.0, -1.0]))


def test_operator_sugar():
    x = Tensor([2.0, 4.0])
    y = Tensor([1.0, 1.0])
    assert np.array_equal((x + y).data, [3.0, 5.0])
    assert np.array_equal((x - y).data, [1.0, 3.0])
    assert np.array_equal((x * 0.5).data, [1.0, 2.0])
    assert np.array_equal((2.0 * x).data, [4.0, 8.0])
    assert np.array_equal((x / 2.0).data, [1.0, 2.0])
    assert np.array_equal((-x).data, [-2.0, -4.0])
