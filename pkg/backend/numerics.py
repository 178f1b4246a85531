"""
Dense float64 matrix arithmetic with tape-free reverse-mode differentiation.

Every operation returns a DifferentiableNode that remembers its operands;
backward() walks the expression graph in reverse topological order and
applies the rule registered in BACKWARD_RULES for each operation.
"""
import logging
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from errors import DimensionError, DomainError, GradientCheckError

logger = logging.getLogger(__name__)


class DifferentiableNode:
    """A matrix value, its accumulated gradient and the operation that produced it"""

    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "context")

    def __init__(
        self,
        value: np.ndarray,
        op: str = "leaf",
        parents: Tuple["DifferentiableNode", ...] = (),
        requires_grad: bool = False,
        context: Optional[dict] = None,
    ):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self.context = context or {}

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def gradient(self) -> np.ndarray:
        """Accumulated gradient, zeros if nothing reached this node"""
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def item(self) -> float:
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"DifferentiableNode(op={self.op!r}, shape={self.shape})"


def _as_matrix(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2:
        raise DimensionError(f"expected a matrix, got {array.ndim} dimensions")
    return array


def _finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise DomainError(f"{op} produced non-finite values")
    return value


def parameter(values) -> DifferentiableNode:
    """Trainable leaf"""
    return DifferentiableNode(_finite(_as_matrix(values), "parameter"), requires_grad=True)


def constant(values) -> DifferentiableNode:
    return DifferentiableNode(_finite(_as_matrix(values), "constant"))


def _node(value: np.ndarray, op: str, parents: Tuple[DifferentiableNode, ...], **context) -> DifferentiableNode:
    return DifferentiableNode(
        _finite(value, op),
        op=op,
        parents=parents,
        requires_grad=any(parent.requires_grad for parent in parents),
        context=context,
    )


# Forward operations

def matmul(a: DifferentiableNode, b: DifferentiableNode) -> DifferentiableNode:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _node(a.value @ b.value, "matmul", (a, b))


def add(a: DifferentiableNode, b: DifferentiableNode) -> DifferentiableNode:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _node(a.value + b.value, "add", (a, b))


def relu(a: DifferentiableNode) -> DifferentiableNode:
    return _node(np.maximum(a.value, 0.0), "relu", (a,))


def scale(a: DifferentiableNode, factor: float) -> DifferentiableNode:
    factor = float(factor)
    return _node(a.value * factor, "scale", (a,), factor=factor)


def elementwise(kind: str, *operands: DifferentiableNode, factor: float = None) -> DifferentiableNode:
    """Dispatch to add, relu or scale by name"""
    if kind == "add":
        if len(operands) != 2:
            raise DimensionError("add takes two operands")
        return add(*operands)
    if kind == "relu":
        return relu(*operands)
    if kind == "scale":
        if factor is None:
            raise DomainError("scale needs a scalar factor")
        return scale(*operands, factor)
    raise DomainError(f"unknown elementwise operation {kind!r}")


def transpose(a: DifferentiableNode) -> DifferentiableNode:
    return _node(a.value.T.copy(), "transpose", (a,))


def softmax_rows(z: DifferentiableNode) -> DifferentiableNode:
    shifted = z.value - np.max(z.value, axis=1, keepdims=True)
    exp = np.exp(shifted)
    return _node(exp / np.sum(exp, axis=1, keepdims=True), "softmax_rows", (z,))


def cross_entropy(logits: DifferentiableNode, label: int) -> DifferentiableNode:
    """-log softmax(logits)[label] for a 1 x 2 logit row"""
    if logits.shape != (1, 2):
        raise DimensionError(f"cross_entropy expects 1 x 2 logits, got {logits.shape}")
    if label not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {label}")
    z = logits.value[0]
    top = np.max(z)
    if z[label] == top:
        others = np.delete(z, label)
        loss = np.log1p(np.sum(np.exp(others - z[label])))
    else:
        loss = (top - z[label]) + np.log(np.sum(np.exp(z - top)))
    exp = np.exp(z - top)
    probabilities = (exp / np.sum(exp)).reshape(1, 2)
    return _node(np.array([[loss]]), "cross_entropy", (logits,), label=label, probabilities=probabilities)


# Backward rules: (node, upstream gradient) -> gradient per parent

def _matmul_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    a, b = node.parents
    return grad @ b.value.T, a.value.T @ grad


def _add_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    return grad, grad


def _relu_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    (a,) = node.parents
    # zero at the kink
    return (grad * (a.value > 0),)


def _scale_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    return (grad * node.context["factor"],)


def _transpose_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    return (grad.T,)


def _softmax_rows_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    y = node.value
    return (y * (grad - np.sum(grad * y, axis=1, keepdims=True)),)


def _cross_entropy_backward(node: DifferentiableNode, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
    target = np.zeros((1, 2))
    target[0, node.context["label"]] = 1.0
    return ((node.context["probabilities"] - target) * grad[0, 0],)


BACKWARD_RULES: Dict[str, Callable[[DifferentiableNode, np.ndarray], Tuple[np.ndarray, ...]]] = {
    "matmul": _matmul_backward,
    "add": _add_backward,
    "relu": _relu_backward,
    "scale": _scale_backward,
    "transpose": _transpose_backward,
    "softmax_rows": _softmax_rows_backward,
    "cross_entropy": _cross_entropy_backward,
}


def _topological_order(output: DifferentiableNode) -> List[DifferentiableNode]:
    order: List[DifferentiableNode] = []
    visited = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: DifferentiableNode) -> None:
    """Accumulate d(output)/d(node) into .grad of every node that requires it"""
    if not output.requires_grad:
        return
    output.grad = np.ones_like(output.value)
    for node in reversed(_topological_order(output)):
        if node.grad is None or not node.parents:
            continue
        parent_grads = BACKWARD_RULES[node.op](node, node.grad)
        for parent, grad in zip(node.parents, parent_grads):
            if not parent.requires_grad:
                continue
            parent.grad = grad.copy() if parent.grad is None else parent.grad + grad


# Finite-difference oracle

class GradientCheckReport(BaseModel):
    passed: bool
    tolerance: float
    step: float
    entries_checked: int
    worst_error: float
    worst_parameter: Optional[str] = None
    worst_index: Optional[List[int]] = None
    worst_analytic: Optional[float] = None
    worst_numeric: Optional[float] = None


def _evaluate(closure: Callable[[], DifferentiableNode]) -> float:
    loss = closure()
    value = loss.item()
    if not np.isfinite(value):
        raise GradientCheckError(f"closure returned non-finite loss {value}")
    return value


def gradient_check(
    closure: Callable[[], DifferentiableNode],
    parameters: Union[Mapping[str, DifferentiableNode], Sequence[DifferentiableNode]],
    tolerance: float = 1e-4,
    step: float = 1e-5,
) -> GradientCheckReport:
    """
    Compare backward() against central differences for every parameter entry.

    The error for one entry is |analytic - numeric| / max(1, |analytic|).
    The closure must rebuild the expression from the parameter nodes on each call.
    """
    if not isinstance(parameters, Mapping):
        parameters = {f"param{index}": node for index, node in enumerate(parameters)}

    for node in parameters.values():
        node.zero_grad()
    loss = closure()
    if not np.isfinite(loss.item()):
        raise GradientCheckError(f"closure returned non-finite loss {loss.item()}")
    backward(loss)
    analytic = {name: node.gradient().copy() for name, node in parameters.items()}

    worst = GradientCheckReport(passed=True, tolerance=tolerance, step=step, entries_checked=0, worst_error=0.0)
    checked = 0
    for name, node in parameters.items():
        for index in np.ndindex(node.value.shape):
            original = node.value[index]
            node.value[index] = original + step
            plus = _evaluate(closure)
            node.value[index] = original - step
            minus = _evaluate(closure)
            node.value[index] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = float(analytic[name][index])
            error = abs(exact - numeric) / max(1.0, abs(exact))
            checked += 1
            if error > worst.worst_error or worst.worst_parameter is None:
                worst = GradientCheckReport(
                    passed=True,
                    tolerance=tolerance,
                    step=step,
                    entries_checked=0,
                    worst_error=error,
                    worst_parameter=name,
                    worst_index=[int(i) for i in index],
                    worst_analytic=exact,
                    worst_numeric=numeric,
                )

    report = worst.model_copy(update={"passed": worst.worst_error <= tolerance, "entries_checked": checked})
    if not report.passed:
        logger.warning(
            f"⚠️ Gradient check failed: {report.worst_parameter}{report.worst_index} "
            f"analytic={report.worst_analytic:.6g} numeric={report.worst_numeric:.6g}"
        )
    return report
