import numpy as np
import pytest

import numerics
from errors import DimensionError, DomainError, GradientCheckError
from numerics import (
    add,
    backward,
    constant,
    cross_entropy,
    elementwise,
    gradient_check,
    matmul,
    parameter,
    relu,
    scale,
    softmax_rows,
    transpose,
)


def test_matmul_value_and_gradients():
    """Product of a row and a column, with the textbook gradients."""
    a = parameter([[1.0, 2.0]])
    b = parameter([[3.0], [4.0]])
    out = matmul(a, b)
    assert out.item() == 11.0
    backward(out)
    assert np.array_equal(a.grad, [[3.0, 4.0]])
    assert np.array_equal(b.grad, [[1.0], [2.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    """Dimension errors carry the operand shapes."""
    with pytest.raises(DimensionError) as excinfo:
        matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))
    assert "(2, 3)" in str(excinfo.value)


def test_add_requires_equal_shapes():
    """add does not broadcast."""
    with pytest.raises(DimensionError):
        add(constant(np.ones((1, 2))), constant(np.ones((2, 1))))


def test_relu_gradient_is_zero_at_kink():
    """relu passes gradient only where the input is strictly positive."""
    x = parameter([[-1.0, 0.0, 2.0]])
    out = matmul(relu(x), constant([[1.0], [1.0], [1.0]]))
    backward(out)
    assert np.array_equal(x.grad, [[0.0, 0.0, 1.0]])


def test_elementwise_dispatch():
    """elementwise routes to add, relu and scale and rejects unknown kinds."""
    a = constant([[1.0, -2.0]])
    assert np.array_equal(elementwise("add", a, a).value, [[2.0, -4.0]])
    assert np.array_equal(elementwise("relu", a).value, [[1.0, 0.0]])
    assert np.array_equal(elementwise("scale", a, factor=0.5).value, [[0.5, -1.0]])
    with pytest.raises(DomainError):
        elementwise("tanh", a)
    with pytest.raises(DomainError):
        elementwise("scale", a)


def test_softmax_rows_sum_to_one_for_large_inputs():
    """Max subtraction keeps softmax finite for huge logits."""
    out = softmax_rows(constant([[1000.0, 1001.0, 999.0], [0.0, 0.0, 0.0]]))
    assert np.all(np.isfinite(out.value))
    assert np.allclose(out.value.sum(axis=1), 1.0)
    assert out.value[1] == pytest.approx([1 / 3] * 3)


def test_cross_entropy_is_stable_and_nonnegative():
    """Loss stays finite for extreme logits and matches log-sum-exp."""
    loss = cross_entropy(constant([[1000.0, -1000.0]]), 0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    loss = cross_entropy(constant([[1000.0, -1000.0]]), 1)
    assert loss.item() == pytest.approx(2000.0)
    loss = cross_entropy(constant([[0.3, -0.2]]), 1)
    assert loss.item() == pytest.approx(np.log(np.exp(0.3) + np.exp(-0.2)) + 0.2)


def test_cross_entropy_gradient_is_probability_minus_target():
    """d loss / d logits = softmax - onehot."""
    logits = parameter([[0.5, -0.5]])
    backward(cross_entropy(logits, 0))
    p = np.exp([0.5, -0.5]) / np.exp([0.5, -0.5]).sum()
    assert logits.grad == pytest.approx(np.array([[p[0] - 1.0, p[1]]]))


def test_non_finite_results_raise_domain_error():
    """Overflowing products are reported instead of propagating inf."""
    big = constant([[1e300]])
    with pytest.raises(DomainError):
        matmul(big, big)


def test_shared_operand_gradients_accumulate():
    """A node used twice receives the sum of both gradient contributions."""
    x = parameter([[3.0]])
    out = add(scale(x, 2.0), matmul(x, x))
    backward(out)
    assert x.grad[0, 0] == pytest.approx(2.0 + 6.0)


def test_gradient_check_passes_on_small_network(rng):
    """Central differences agree with backward on a two-layer expression."""
    w1 = parameter(rng.normal(size=(4, 3)))
    w2 = parameter(rng.normal(size=(3, 2)))
    x = constant(rng.normal(size=(1, 4)))

    def closure():
        hidden = softmax_rows(transpose(transpose(matmul(x, w1))))
        return cross_entropy(matmul(hidden, w2), 1)

    report = gradient_check(closure, {"w1": w1, "w2": w2})
    assert report.passed
    assert report.entries_checked == 12 + 6
    assert report.worst_error <= 1e-4


def test_gradient_check_detects_wrong_backward_rule(rng, monkeypatch):
    """Mutating a registered backward rule makes the check fail."""
    monkeypatch.setitem(numerics.BACKWARD_RULES, "relu", lambda node, grad: (grad,))
    w = parameter(rng.normal(size=(3, 2)))
    x = constant([[1.0, -1.0, 0.5]])
    w.value[:, 0] = [-1.0, 1.0, -1.0]  # makes the first pre-activation negative

    report = gradient_check(lambda: cross_entropy(relu(matmul(x, w)), 0), [w])
    assert not report.passed
    assert report.worst_parameter == "param0"


def test_gradient_check_rejects_non_finite_loss():
    """A closure returning nan is a gradient-check error."""
    w = parameter([[1.0]])
    bad = numerics.DifferentiableNode(np.array([[np.nan]]))
    with pytest.raises(GradientCheckError):
        gradient_check(lambda: bad, [w])


def test_matmul_is_associative(rng):
    """(AB)C and A(BC) agree to rounding."""
    a, b, c = (constant(rng.normal(size=shape)) for shape in [(3, 4), (4, 5), (5, 2)])
    left = matmul(matmul(a, b), c).value
    right = matmul(a, matmul(b, c)).value
    assert np.allclose(left, right, rtol=1e-12, atol=1e-12)


def test_cross_entropy_reference_values():
    """Equal logits cost ln 2; a confident correct prediction costs log1p(e^-20)."""
    assert cross_entropy(constant([[0.0, 0.0]]), 0).item() == pytest.approx(np.log(2.0), rel=1e-15)
    assert cross_entropy(constant([[0.0, 0.0]]), 1).item() == pytest.approx(np.log(2.0), rel=1e-15)
    assert cross_entropy(constant([[10.0, -10.0]]), 0).item() == pytest.approx(2.0611536e-9, rel=1e-6)
