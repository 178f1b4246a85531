"""
FederatedAveraging across simulated hospitals, plus the non-federated baseline.

Each round the server broadcasts a copy of the global weights, every hospital
runs E epochs of SGD on its two training folds, and the server replaces the
global weights with the uniform mean of the H local results.
"""
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from errors import AggregationError, DomainError, ParameterError, PartitionError, TrainingError
from gnn import GraphClassifier, DiffPoolClassifier, build_model, extract_node_weights, sgd_step
from models import (
    FederationConfig,
    GraphSample,
    HospitalPartition,
    ModelKind,
    ModelSpec,
    ModelWeights,
    NodeWeightVector,
    RunMode,
)

logger = logging.getLogger(__name__)

# SeedSequence stream tags
INIT_STREAM = 0
BATCH_STREAM = 1
PARTITION_STREAM = 2


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for one (stream, hospital, round, epoch, ...) key"""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1)[0])


class RoundTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    round_index: int
    local_weights: List[ModelWeights]
    global_weights: ModelWeights
    train_losses: List[float]
    validation_accuracies: List[float]

    def max_mean_deviation(self) -> float:
        """Largest gap between the global weights and an exactly rounded hospital mean"""
        worst = 0.0
        count = len(self.local_weights)
        for name, averaged in self.global_weights.parameters.items():
            stacked = np.stack([weights.parameters[name] for weights in self.local_weights])
            for index in np.ndindex(averaged.shape):
                exact = math.fsum(stacked[(slice(None),) + index]) / count
                worst = max(worst, abs(averaged[index] - exact))
        return worst


class HospitalOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    hospital: int
    weights: ModelWeights
    node_weights: NodeWeightVector
    accuracy: float
    gradient_steps: int


class FederationOutcome(BaseModel):
    """Everything one (mode, model, fold) training job produces"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mode: RunMode
    model_kind: ModelKind
    fold_index: int
    global_weights: Optional[ModelWeights] = None
    hospitals: List[HospitalOutcome]
    rounds: List[RoundTrace]


def federated_average(local_weights: Sequence[ModelWeights]) -> ModelWeights:
    """Entry-wise arithmetic mean over hospitals using compensated (Neumaier) summation"""
    if not local_weights:
        raise AggregationError("cannot average an empty list of weights")
    reference = local_weights[0]
    for weights in local_weights[1:]:
        if weights.names() != reference.names() or weights.shapes() != reference.shapes():
            raise AggregationError(
                f"weight snapshots differ: {list(zip(reference.names(), reference.shapes()))} "
                f"vs {list(zip(weights.names(), weights.shapes()))}"
            )
    if len(local_weights) == 1:
        return ModelWeights(parameters=reference.parameters)

    averaged = {}
    for name in reference.names():
        total = np.array(reference.parameters[name], copy=True)
        compensation = np.zeros_like(total)
        for weights in local_weights[1:]:
            value = weights.parameters[name]
            running = total + value
            compensation += np.where(
                np.abs(total) >= np.abs(value), (total - running) + value, (value - running) + total
            )
            total = running
        averaged[name] = (total + compensation) / len(local_weights)
    return ModelWeights(parameters=averaged)


def _accuracy(model: GraphClassifier, samples: Sequence[GraphSample], where: str = "evaluation") -> float:
    if not samples:
        raise ParameterError("cannot evaluate on an empty fold")
    try:
        correct = sum(1 for sample in samples if model.predict(sample) == sample.label)
    except DomainError as e:
        raise TrainingError(f"{where}: weights produce non-finite outputs: {e}")
    return correct / len(samples)


def evaluate(weights: ModelWeights, samples: Sequence[GraphSample], spec: ModelSpec) -> float:
    """argmax accuracy of the given weights on a fold (ties go to class 0)"""
    model = build_model(spec)
    model.restore(weights)
    return _accuracy(model, samples)


def _train_locally(
    model: GraphClassifier,
    start: ModelWeights,
    train: Sequence[GraphSample],
    cfg: FederationConfig,
    lr: float,
    hospital: int,
    round_index: int,
) -> Tuple[ModelWeights, float, int]:
    """E epochs of SGD from a private copy of start; returns weights, last-epoch mean loss, step count"""
    if not train:
        raise PartitionError(f"hospital {hospital} has no training samples")
    model.restore(start)
    steps = 0
    epoch_losses: List[float] = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, BATCH_STREAM, hospital, round_index, epoch))
        order = rng.permutation(len(train))
        epoch_losses = []
        for batch_index, offset in enumerate(range(0, len(train), cfg.batch_size)):
            batch = [train[i] for i in order[offset : offset + cfg.batch_size]]
            try:
                epoch_losses.append(sgd_step(model, batch, lr))
            except TrainingError as e:
                raise TrainingError(
                    f"hospital {hospital}, epoch {epoch}, batch {batch_index}: {e}", e.sample_index
                )
            steps += 1
    return model.snapshot(), float(np.mean(epoch_losses)), steps


def local_update(
    global_weights: ModelWeights,
    train: Sequence[GraphSample],
    spec: ModelSpec,
    cfg: FederationConfig,
    hospital: int = 0,
    round_index: int = 0,
) -> ModelWeights:
    """LocalUpdate(deepCopy(G)): train a copy of the global weights on one hospital's data"""
    model = build_model(spec)
    weights, _, _ = _train_locally(model, global_weights, train, cfg, cfg.learning_rate(spec.kind), hospital, round_index)
    return weights


def _node_weights(
    model: GraphClassifier, weights: ModelWeights, train: Sequence[GraphSample], hospital: int, where: str
) -> NodeWeightVector:
    model.restore(weights)
    try:
        if isinstance(model, DiffPoolClassifier):
            model.cache_assignments(train)
        return extract_node_weights(model, hospital_id=hospital)
    except (DomainError, ValidationError) as e:
        raise TrainingError(f"{where}: node weights are not finite: {e}")


def _splits(partition: HospitalPartition, fold_index: int):
    if fold_index not in (0, 1, 2):
        raise ParameterError(f"fold index must be 0, 1 or 2, got {fold_index}")
    return [partition.split(hospital, fold_index) for hospital in range(partition.hospital_count)]


def run_federation(
    partition: HospitalPartition,
    spec: ModelSpec,
    cfg: FederationConfig,
    fold_index: int,
) -> FederationOutcome:
    """Algorithm: C rounds of broadcast -> local updates -> uniform average"""
    splits = _splits(partition, fold_index)
    lr = cfg.learning_rate(spec.kind)
    worker = build_model(spec)
    global_weights = worker.snapshot()
    logger.info(
        f"🔧 Federating {spec.kind.value} over {len(splits)} hospitals, fold {fold_index}: "
        f"C={cfg.rounds} E={cfg.epochs} B={cfg.batch_size} lr={lr:g}"
    )

    rounds: List[RoundTrace] = []
    local_weights: List[ModelWeights] = []
    steps = [0] * len(splits)
    for round_index in range(cfg.rounds):
        local_weights, losses, accuracies = [], [], []
        for hospital, (train, held_out) in enumerate(splits):
            try:
                weights, loss, count = _train_locally(worker, global_weights, train, cfg, lr, hospital, round_index)
            except TrainingError as e:
                raise TrainingError(f"round {round_index}, {e}", e.sample_index)
            local_weights.append(weights)
            losses.append(loss)
            where = f"round {round_index}, hospital {hospital}, epoch {cfg.epochs - 1}"
            accuracies.append(_accuracy(worker, held_out, where))
            steps[hospital] += count
        global_weights = federated_average(local_weights)
        rounds.append(
            RoundTrace(
                round_index=round_index,
                local_weights=local_weights,
                global_weights=global_weights,
                train_losses=losses,
                validation_accuracies=accuracies,
            )
        )
        logger.info(f"📊 Round {round_index}: losses {[round(l, 4) for l in losses]}, accuracies {accuracies}")

    hospitals = []
    for hospital, (train, held_out) in enumerate(splits):
        worker.restore(global_weights)
        where = f"round {cfg.rounds - 1}, hospital {hospital}, epoch {cfg.epochs - 1}"
        accuracy = _accuracy(worker, held_out, f"{where}, global model")
        hospitals.append(
            HospitalOutcome(
                hospital=hospital,
                weights=local_weights[hospital],
                node_weights=_node_weights(worker, local_weights[hospital], train, hospital, where),
                accuracy=accuracy,
                gradient_steps=steps[hospital],
            )
        )
    logger.info(f"✅ Federated {spec.kind.value} fold {fold_index}: accuracies {[h.accuracy for h in hospitals]}")
    return FederationOutcome(
        mode=RunMode.FEDERATED,
        model_kind=spec.kind,
        fold_index=fold_index,
        global_weights=global_weights,
        hospitals=hospitals,
        rounds=rounds,
    )


def run_baseline(
    partition: HospitalPartition,
    spec: ModelSpec,
    cfg: FederationConfig,
    fold_index: int,
) -> FederationOutcome:
    """Every hospital trains alone for C x E epochs from the same seeded initialization"""
    splits = _splits(partition, fold_index)
    lr = cfg.learning_rate(spec.kind)
    worker = build_model(spec)
    initial = worker.snapshot()
    logger.info(f"🔧 Baseline {spec.kind.value} over {len(splits)} hospitals, fold {fold_index}")

    hospitals = []
    for hospital, (train, held_out) in enumerate(splits):
        weights = initial
        steps = 0
        # same per-(hospital, round, epoch) batch streams as the federated arm
        for round_index in range(cfg.rounds):
            try:
                weights, _, count = _train_locally(worker, weights, train, cfg, lr, hospital, round_index)
            except TrainingError as e:
                raise TrainingError(f"round {round_index}, {e}", e.sample_index)
            steps += count
        where = f"round {cfg.rounds - 1}, hospital {hospital}, epoch {cfg.epochs - 1}"
        accuracy = _accuracy(worker, held_out, where)
        hospitals.append(
            HospitalOutcome(
                hospital=hospital,
                weights=weights,
                node_weights=_node_weights(worker, weights, train, hospital, where),
                accuracy=accuracy,
                gradient_steps=steps,
            )
        )
    logger.info(f"✅ Baseline {spec.kind.value} fold {fold_index}: accuracies {[h.accuracy for h in hospitals]}")
    return FederationOutcome(
        mode=RunMode.BASELINE,
        model_kind=spec.kind,
        fold_index=fold_index,
        hospitals=hospitals,
        rounds=[],
    )
