import numpy as np
import pytest

from versa_motion import autograd as ag
from versa_motion.errors import InvalidInputError, ShapeError, UndefinedMeanError


def weighted_sum(out, weights):
    return ag.sum(ag.mul(out, weights))


def test_uniform_logits_cross_entropy_is_log_k():
    loss = ag.softmax_cross_entropy(np.zeros((6, 512)), np.arange(6))
    assert float(loss.data) == pytest.approx(np.log(512), abs=1e-3)


def test_cross_entropy_only_scores_flag_zero():
    logits = np.zeros((3, 4))
    logits[0, 1] = 50.0
    # row 0 is confidently right, rows 1 and 2 are excluded
    loss = ag.softmax_cross_entropy(logits, [1, 0, 0], flags=[0, 1, 1])
    assert float(loss.data) == pytest.approx(0.0, abs=1e-6)
    loss = ag.softmax_cross_entropy(logits, [1, 0, 0], flags=[1, 0, 1])
    assert float(loss.data) == pytest.approx(np.log(4), abs=1e-6)


def test_cross_entropy_errors():
    with pytest.raises(UndefinedMeanError):
        ag.softmax_cross_entropy(np.zeros((2, 4)), [0, 1], flags=[1, 1])
    with pytest.raises(InvalidInputError):
        ag.softmax_cross_entropy(np.zeros((2, 4)), [0, 4])
    with pytest.raises(ShapeError):
        ag.softmax_cross_entropy(np.zeros((2, 4)), [0, 1, 2])


def test_cross_entropy_gradient(rng):
    targets = rng.integers(0, 7, size=5)
    flags = np.array([0, 1, 0, 0, 1])
    error = ag.finite_diff_check(lambda logits: ag.softmax_cross_entropy(logits, targets, flags),
                                 {"logits": rng.standard_normal((5, 7))})
    assert error < 1e-3


def test_straight_through_passes_gradient_exactly(rng):
    z = ag.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    snapped = np.round(z.data)
    weights = rng.standard_normal((4, 3)).astype(np.float32)
    out = ag.straight_through(z, snapped)
    np.testing.assert_array_equal(out.data, snapped)
    weighted_sum(out, weights).backward()
    np.testing.assert_array_equal(z.grad, weights)


def test_stop_gradient_blocks_flow(rng):
    x = ag.Tensor(rng.standard_normal(3), requires_grad=True)
    out = ag.add(ag.mul(x, 2.0), ag.stop_gradient(ag.mul(x, 5.0)))
    ag.sum(out).backward()
    np.testing.assert_allclose(x.grad, 2.0)


def test_broadcast_gradient_is_reduced(rng):
    a = ag.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = ag.Tensor(rng.standard_normal(4), requires_grad=True)
    ag.sum(ag.add(a, b)).backward()
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))
    with pytest.raises(ShapeError):
        ag.add(a, np.zeros(3))


def test_reused_tensor_accumulates(rng):
    x = ag.Tensor(rng.standard_normal(5), requires_grad=True)
    ag.sum(ag.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data, rtol=1e-6)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        ag.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_no_grad_records_nothing(rng):
    x = ag.Tensor(rng.standard_normal(3), requires_grad=True)
    with ag.no_grad():
        y = ag.mul(x, 3.0)
    assert not y.requires_grad


def test_debug_mode_rejects_non_finite():
    x = ag.Tensor([np.inf, 1.0])
    assert not np.isfinite(ag.add(x, 1.0).data).all()
    with ag.debug_mode():
        with pytest.raises(InvalidInputError):
            ag.add(x, 1.0)


def test_precision_context_sets_dtype():
    with ag.precision(np.float64):
        assert ag.Tensor([1.0]).data.dtype == np.float64
    assert ag.Tensor([1.0]).data.dtype == np.float32


def test_autodiff_eval_returns_input_gradients(rng):
    x = rng.standard_normal((2, 3))
    w = rng.standard_normal((3, 2))
    out, gradients = ag.autodiff_eval(lambda x, w: ag.sum(ag.matmul(x, w)), {"x": x, "w": w})
    assert float(out.data) == pytest.approx(float((x @ w).sum()), rel=1e-5, abs=1e-4)
    grads = gradients()
    np.testing.assert_allclose(grads["x"], np.tile(w.sum(axis=1), (2, 1)), rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(grads["w"], np.tile(x.sum(axis=0)[:, None], (1, 2)), rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_random_three_layer_graph(seed):
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((4, 2))

    def graph(x, w1, w2, w3):
        h = ag.gelu(ag.matmul(x, w1))
        h = ag.layer_norm(ag.matmul(h, w2), np.ones(6), np.zeros(6))
        return weighted_sum(ag.softmax(ag.matmul(h, w3)), weights)

    inputs = {"x": rng.standard_normal((4, 5)), "w1": rng.standard_normal((5, 6)),
              "w2": rng.standard_normal((6, 6)), "w3": rng.standard_normal((6, 2))}
    assert ag.finite_diff_check(graph, inputs) < 1e-3


def test_elementwise_and_shape_ops(rng):
    weights = rng.standard_normal((3, 8))

    def graph(x, y):
        joined = ag.concat([ag.square(x), ag.abs(y)], axis=1)
        flipped = ag.transpose(ag.reshape(joined, (8, 3)), (1, 0))
        return weighted_sum(ag.log_softmax(flipped), weights) + ag.mean(ag.index(x, (slice(None), 1)))

    inputs = {"x": rng.standard_normal((3, 4)), "y": rng.uniform(0.5, 1.5, (3, 4))}
    assert ag.finite_diff_check(graph, inputs) < 1e-3


def test_convolution_gradients(rng):
    w_out = rng.standard_normal((2, 4, 3))
    w_up = rng.standard_normal((2, 14, 3))

    def down(x, w):
        return weighted_sum(ag.conv1d(x, w, stride=2, padding=1), w_out)

    def up(x, w):
        return weighted_sum(ag.conv_transpose1d(x, w, stride=2, padding=1), w_up)

    assert ag.finite_diff_check(down, {"x": rng.standard_normal((2, 7, 2)),
                                       "w": rng.standard_normal((3, 2, 3))}) < 1e-3
    assert ag.finite_diff_check(up, {"x": rng.standard_normal((2, 7, 2)),
                                     "w": rng.standard_normal((4, 2, 3))}) < 1e-3


def test_conv_output_lengths(rng):
    x = rng.standard_normal((1, 8, 2))
    assert ag.conv1d(x, rng.standard_normal((4, 2, 3)), stride=2, padding=1).shape == (1, 4, 3)
    assert ag.conv_transpose1d(x, rng.standard_normal((4, 2, 3)), stride=2, padding=1).shape == (1, 16, 3)
    with pytest.raises(ShapeError):
        ag.conv1d(x, rng.standard_normal((4, 3, 3)))


def test_embedding_gradient_collects_repeated_ids(rng):
    weight = ag.Tensor(rng.standard_normal((5, 2)), requires_grad=True)
    ag.sum(ag.embedding(weight, np.array([1, 1, 3]))).backward()
    np.testing.assert_allclose(weight.grad, [[0, 0], [2, 2], [0, 0], [1, 1], [0, 0]])
    with pytest.raises(ShapeError):
        ag.embedding(weight, np.array([5]))


def test_division_by_tensor(rng):
    weights = rng.standard_normal((3, 4))

    def graph(x, y):
        return weighted_sum(x / y + 2.0 / y + x / 4.0, weights)

    inputs = {"x": rng.standard_normal((3, 4)), "y": rng.uniform(0.5, 1.5, (3, 4))}
    assert ag.finite_diff_check(graph, inputs) < 1e-3

    x, y = ag.Tensor(np.array([6.0, 3.0])), ag.Tensor(np.array([[2.0], [3.0]]))
    np.testing.assert_allclose((x / y).data, [[3.0, 1.5], [2.0, 1.0]])
    with pytest.raises(InvalidInputError):
        x / ag.Tensor(np.array([1.0, 0.0]))
    with pytest.raises(ShapeError):
        x / ag.Tensor(np.ones(3))
