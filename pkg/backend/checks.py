"""
Self-checks behind the `check` verb: analytic gradients against finite
differences, FedAvg exactness, and the reproducibility analysis against a
brute-force set-intersection oracle.
"""
import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel

from data import partition_hospitals, synth_planted
from federation import federated_average, run_federation
from gnn import build_model
from models import FederationConfig, GraphSample, ModelKind, ModelSpec, ReproducibilityMatrix
from numerics import cross_entropy, gradient_check
from reproducibility import (
    average_rep_matrix,
    hospital_rep_matrix,
    model_strength,
    select_most_reproducible,
)

logger = logging.getLogger(__name__)

GRADIENT_GRAPHS = 10
ORACLE_INSTANCES = 100
DEVIATION_LIMIT = 1e-12


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


def random_graph_sample(rng: np.random.Generator, node_count: int, label: int = None) -> GraphSample:
    """Symmetric zero-diagonal graph with uniform [0, 1) edge weights"""
    upper = np.triu(rng.uniform(0.0, 1.0, size=(node_count, node_count)), k=1)
    if label is None:
        label = int(rng.integers(0, 2))
    return GraphSample(adjacency=upper + upper.T, label=label, subject_id=f"random-{node_count}")


def check_gradients(kind: ModelKind, seed: int = 0, graphs: int = GRADIENT_GRAPHS) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst, entries = 0.0, 0
    for index in range(graphs):
        sample = random_graph_sample(rng, 6)
        spec = ModelSpec(kind=kind, node_count=6, hidden_dim=4, pool_clusters=3, seed=seed + index)
        model = build_model(spec)
        report = gradient_check(lambda: cross_entropy(model.forward(sample), sample.label), model.parameters)
        entries += report.entries_checked
        worst = max(worst, report.worst_error)
        if not report.passed:
            return CheckResult(
                name=f"gradient {kind.value}",
                passed=False,
                detail=f"graph {index}: {report.worst_parameter}{report.worst_index} error {report.worst_error:.3g}",
            )
    return CheckResult(
        name=f"gradient {kind.value}",
        passed=True,
        detail=f"{graphs} graphs, {entries} entries, worst error {worst:.3g}",
    )


def check_fedavg(seed: int = 0) -> CheckResult:
    dataset, _ = synth_planted(8, 24, [0, 1], 1.0, 0.2, seed)
    partition = partition_hospitals(dataset, 3, seed)
    cfg = FederationConfig(hospitals=3, rounds=3, epochs=1, learning_rates={ModelKind.GCN: 0.01}, seed=seed)
    spec = ModelSpec(kind=ModelKind.GCN, node_count=8, hidden_dim=4, seed=seed)
    outcome = run_federation(partition, spec, cfg, 0)
    deviation = max(trace.max_mean_deviation() for trace in outcome.rounds)
    single = outcome.rounds[0].local_weights[0]
    identity = federated_average([single]).equals(single)
    return CheckResult(
        name="fedavg exactness",
        passed=deviation <= DEVIATION_LIMIT and identity,
        detail=f"max deviation {deviation:.3g} over {len(outcome.rounds)} rounds, H=1 identity {identity}",
    )


def _brute_top_k(weights: Sequence[float], k: int) -> set:
    return set(sorted(range(len(weights)), key=lambda n: (-abs(weights[n]), n))[:k])


def check_reproducibility_oracle(seed: int = 0, instances: int = ORACLE_INSTANCES) -> CheckResult:
    rng = np.random.default_rng(seed)
    for instance in range(instances):
        n = int(rng.integers(2, 13))
        m = int(rng.integers(1, 5))
        h = int(rng.integers(1, 4))
        k = int(rng.integers(1, min(6, n) + 1))
        names = [f"model{i}" for i in range(m)]
        # small integer weights on odd instances force magnitude ties
        draw = (lambda: rng.integers(-3, 4, size=n).astype(float)) if instance % 2 else (lambda: rng.normal(size=n))
        per_hospital = [[draw() for _ in range(m)] for _ in range(h)]

        matrices = [hospital_rep_matrix(vectors, k, models=names) for vectors in per_hospital]
        total = np.zeros((m, m))
        for matrix, vectors in zip(matrices, per_hospital):
            sets = [_brute_top_k(w, k) for w in vectors]
            expected = [[len(sets[i] & sets[j]) / k for j in range(m)] for i in range(m)]
            if matrix.values != expected:
                return CheckResult(name="reproducibility oracle", passed=False, detail=f"instance {instance}: hospital matrix differs")
            total = total + np.asarray(expected)
        if average_rep_matrix(matrices).values != (total / h).tolist():
            return CheckResult(name="reproducibility oracle", passed=False, detail=f"instance {instance}: average differs")
    return CheckResult(name="reproducibility oracle", passed=True, detail=f"{instances} random instances match")


def check_strength(seed: int = 0, instances: int = ORACLE_INSTANCES) -> CheckResult:
    rng = np.random.default_rng(seed)
    for instance in range(instances):
        m = int(rng.integers(1, 6))
        k = int(rng.integers(1, 7))
        values = np.eye(m)
        for i in range(m):
            for j in range(i + 1, m):
                values[i, j] = values[j, i] = rng.integers(0, k + 1) / k
        names = [f"model{i}" for i in range(m)]
        matrix = ReproducibilityMatrix(values=values.tolist(), models=names, k=k)
        strengths = model_strength(matrix)
        expected = [sum(row) - 1.0 for row in values.tolist()]
        if any(abs(a - b) > DEVIATION_LIMIT for a, b in zip(strengths.scores, expected)):
            return CheckResult(name="node strength", passed=False, detail=f"instance {instance}: strengths differ")
        best = max(range(m), key=lambda i: (expected[i], -i))
        if select_most_reproducible(strengths) != best:
            return CheckResult(name="node strength", passed=False, detail=f"instance {instance}: selection differs")
    return CheckResult(name="node strength", passed=True, detail=f"{instances} random matrices match")


def run_self_checks(seed: int = 0) -> List[CheckResult]:
    results = [
        check_gradients(ModelKind.GCN, seed),
        check_gradients(ModelKind.DIFFPOOL, seed),
        check_fedavg(seed),
        check_reproducibility_oracle(seed),
        check_strength(seed),
    ]
    for result in results:
        if result.passed:
            logger.info(f"✅ {result.name}: {result.detail}")
        else:
            logger.error(f"❌ {result.name}: {result.detail}")
    return results
