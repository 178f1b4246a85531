"""
Pool of GNN graph classifiers: a whole-graph GCN and a single-stage DiffPool.

Both models read a sample's adjacency A as structure and as node features
(X = A, each node described by its connectivity profile) and emit 1 x 2
logits. Parameters are initialized uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
from `ModelSpec.seed`; biases start at zero.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import DimensionError, DomainError, ParameterError, PreconditionError, TrainingError
from models import GraphSample, ModelKind, ModelSpec, ModelWeights, NodeWeightVector, SYMMETRY_TOLERANCE
from numerics import (
    DifferentiableNode,
    add,
    backward,
    constant,
    cross_entropy,
    matmul,
    parameter,
    relu,
    scale,
    softmax_rows,
    transpose,
)

logger = logging.getLogger(__name__)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I"""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got shape {a.shape}")
    if np.any(a < 0):
        raise DomainError("adjacency has negative entries")
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOLERANCE:
        raise DomainError("adjacency is not symmetric")
    with_loops = a + np.eye(a.shape[0])
    degree = with_loops.sum(axis=1)
    return with_loops / np.sqrt(np.outer(degree, degree))


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GraphClassifier:
    """Shared parameter handling for the model pool"""

    kind: ModelKind

    def __init__(self, spec: ModelSpec):
        if spec.kind != self.kind:
            raise ParameterError(f"{type(self).__name__} cannot be built from a {spec.kind.value} spec")
        self.spec = spec
        self.parameters: Dict[str, DifferentiableNode] = {
            name: parameter(values) for name, values in self._initial_values(np.random.default_rng(spec.seed)).items()
        }

    def _initial_values(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def forward(self, sample: GraphSample) -> DifferentiableNode:
        raise NotImplementedError

    def _inputs(self, sample: GraphSample):
        adjacency = sample.adjacency
        if adjacency.shape != (self.spec.node_count, self.spec.node_count):
            raise DimensionError(
                f"sample {sample.subject_id} is {adjacency.shape[0]} x {adjacency.shape[1]}, "
                f"model expects {self.spec.node_count} nodes"
            )
        a_hat = normalize_adjacency(adjacency)
        # features are the adjacency rows, so A_hat X is fixed per sample
        return constant(a_hat), constant(a_hat @ adjacency)

    def zero_grad(self) -> None:
        for node in self.parameters.values():
            node.zero_grad()

    def snapshot(self) -> ModelWeights:
        return ModelWeights(parameters={name: node.value for name, node in self.parameters.items()})

    def restore(self, weights: ModelWeights) -> None:
        if weights.names() != list(self.parameters):
            raise DimensionError(f"weights {weights.names()} do not match parameters {list(self.parameters)}")
        for name, node in self.parameters.items():
            values = weights.parameters[name]
            if values.shape != node.value.shape:
                raise DimensionError(f"{name}: expected shape {node.value.shape}, got {values.shape}")
            node.value = np.array(values, dtype=np.float64, copy=True)
            node.zero_grad()

    def predict(self, sample: GraphSample) -> int:
        """argmax of the logits, ties go to class 0"""
        logits = self.forward(sample).value[0]
        return 1 if logits[1] > logits[0] else 0


class GCNClassifier(GraphClassifier):
    """
    Two graph convolutions down to one scalar per node, then a dense head.

    Z1 = relu(A_hat X W1), z = A_hat Z1 W2 (N x 1), z_c = z - mean(z),
    logits = (W_head z_c)^T + b

    Centering removes the shift every node shares, so head column n only
    learns from how node n departs from the rest of the graph.
    """

    kind = ModelKind.GCN

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        n = spec.node_count
        self.centering = np.eye(n) - np.full((n, n), 1.0 / n)

    def _initial_values(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        n, hidden = self.spec.node_count, self.spec.hidden_dim
        return {
            "W1": _uniform(rng, n, (n, hidden)),
            "W2": _uniform(rng, hidden, (hidden, 1)),
            "W_head": _uniform(rng, n, (2, n)),
            "b": np.zeros((1, 2)),
        }

    def node_embedding(self, sample: GraphSample) -> DifferentiableNode:
        a_hat, propagated = self._inputs(sample)
        hidden = relu(matmul(propagated, self.parameters["W1"]))
        return matmul(a_hat, matmul(hidden, self.parameters["W2"]))

    def forward(self, sample: GraphSample) -> DifferentiableNode:
        z = matmul(constant(self.centering), self.node_embedding(sample))
        return add(transpose(matmul(self.parameters["W_head"], z)), self.parameters["b"])


class DiffPoolClassifier(GraphClassifier):
    """
    One soft-pooling stage into c clusters.

    Z = relu(A_hat X W_embed), S = softmax_rows(A_hat X W_pool),
    X' = S^T Z, A' = S^T A_hat S, z_c = A' X' W_out, logits = (W_head z_c)^T + b
    """

    kind = ModelKind.DIFFPOOL

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        self.mean_assignment: Optional[np.ndarray] = None

    def _initial_values(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        n, hidden, clusters = self.spec.node_count, self.spec.hidden_dim, self.spec.pool_clusters
        return {
            "W_embed": _uniform(rng, n, (n, hidden)),
            "W_pool": _uniform(rng, n, (n, clusters)),
            "W_out": _uniform(rng, hidden, (hidden, 1)),
            "W_head": _uniform(rng, clusters, (2, clusters)),
            "b": np.zeros((1, 2)),
        }

    def _assignment(self, propagated: DifferentiableNode) -> DifferentiableNode:
        return softmax_rows(matmul(propagated, self.parameters["W_pool"]))

    def forward(self, sample: GraphSample) -> DifferentiableNode:
        a_hat, propagated = self._inputs(sample)
        embedded = relu(matmul(propagated, self.parameters["W_embed"]))
        assignment = self._assignment(propagated)
        assignment_t = transpose(assignment)
        pooled_features = matmul(assignment_t, embedded)
        pooled_adjacency = matmul(assignment_t, matmul(a_hat, assignment))
        cluster_embedding = matmul(pooled_adjacency, matmul(pooled_features, self.parameters["W_out"]))
        return add(transpose(matmul(self.parameters["W_head"], cluster_embedding)), self.parameters["b"])

    def assignment(self, sample: GraphSample) -> np.ndarray:
        """Soft cluster assignment S (N x c) under the current weights"""
        _, propagated = self._inputs(sample)
        return self._assignment(propagated).value

    def cache_assignments(self, samples: Sequence[GraphSample]) -> np.ndarray:
        """Average S over the given (training) samples for node-weight back-projection"""
        if not samples:
            raise PreconditionError("cannot cache assignments without samples")
        self.mean_assignment = np.mean([self.assignment(sample) for sample in samples], axis=0)
        return self.mean_assignment

    def restore(self, weights: ModelWeights) -> None:
        super().restore(weights)
        self.mean_assignment = None


MODEL_CLASSES = {
    ModelKind.GCN: GCNClassifier,
    ModelKind.DIFFPOOL: DiffPoolClassifier,
}


def build_model(spec: ModelSpec) -> GraphClassifier:
    return MODEL_CLASSES[spec.kind](spec)


def forward_gcn(model: GCNClassifier, sample: GraphSample) -> DifferentiableNode:
    return model.forward(sample)


def forward_diffpool(model: DiffPoolClassifier, sample: GraphSample) -> DifferentiableNode:
    return model.forward(sample)


def extract_node_weights(model: GraphClassifier, hospital_id: int = None) -> NodeWeightVector:
    """
    Per-node weights from the last embedding layer.

    GCN: w_n = sum_c |W_head[c, n]|.
    DiffPool: cluster weights sum_c |W_head[c, j]| back-projected through the
    mean assignment, w = S_bar w_cluster.
    """
    head = np.abs(model.parameters["W_head"].value).sum(axis=0)
    if isinstance(model, DiffPoolClassifier):
        if model.mean_assignment is None:
            raise PreconditionError(
                "DiffPool has no cached assignments; run cache_assignments() over the training data first"
            )
        weights = model.mean_assignment @ head
    else:
        weights = head
    return NodeWeightVector(weights=[float(w) for w in weights], model_kind=model.kind, hospital_id=hospital_id)


def sgd_step(model: GraphClassifier, batch: List[GraphSample], lr: float) -> float:
    """One plain SGD step on the mean cross-entropy of the batch; returns that mean loss"""
    if not batch:
        raise ParameterError("batch must not be empty")
    if lr < 0:
        raise ParameterError(f"learning rate must be non-negative, got {lr}")

    model.zero_grad()
    total = None
    for index, sample in enumerate(batch):
        try:
            loss = cross_entropy(model.forward(sample), sample.label)
        except DomainError as e:
            raise TrainingError(f"non-finite values on batch sample {index} ({sample.subject_id}): {e}", index)
        if not np.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss on batch sample {index} ({sample.subject_id})", index)
        total = loss if total is None else add(total, loss)

    mean_loss = scale(total, 1.0 / len(batch))
    if lr == 0:
        return mean_loss.item()
    backward(mean_loss)
    for node in model.parameters.values():
        node.value = node.value - lr * node.gradient()
    for name, node in model.parameters.items():
        if not np.all(np.isfinite(node.value)):
            raise TrainingError(f"update diverged: {name} has non-finite entries after a step with lr {lr:g}")
    return mean_loss.item()
