"""
Experiment runner: baseline and federated arms over every fold rotation,
repeat seed and pooled model, followed by the reproducibility analysis.
"""
import hashlib
import json
import logging
import re
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from data import FOLD_COUNT, load_dataset, partition_hospitals
from errors import TrainingError, UsageError
from federation import (
    INIT_STREAM,
    PARTITION_STREAM,
    FederationOutcome,
    derive_seed,
    run_baseline,
    run_federation,
)
from models import (
    AccuracyRecord,
    Dataset,
    ExperimentConfig,
    FederationConfig,
    HospitalPartition,
    ModeResult,
    ModelKind,
    ModelSpec,
    NodeWeightVector,
    RoundSummary,
    RunMode,
    RunResult,
)
from report import write_report
from reproducibility import (
    average_rep_matrix,
    hospital_rep_matrix,
    model_strength,
    select_biomarkers,
    select_most_reproducible,
)
from store import ResultStore

logger = logging.getLogger(__name__)

# (arm, repeat, fold, model)
JobKey = Tuple[RunMode, int, int, ModelKind]

ARM_RUNNERS = {
    RunMode.BASELINE: run_baseline,
    RunMode.FEDERATED: run_federation,
}


def compute_run_id(cfg: ExperimentConfig) -> str:
    """Deterministic id from the config echo; output location and worker count do not change results"""
    echo = cfg.model_dump(mode="json", exclude={"output_dir", "max_workers"})
    digest = hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()[:12]
    slug = re.sub(r"[^A-Za-z0-9_.-]+", "-", cfg.name).strip("-") or "run"
    return f"{slug}-{digest}"


def pool_clusters_for(cfg: ExperimentConfig, node_count: int) -> int:
    clusters = cfg.pool_clusters
    if ModelKind.DIFFPOOL in cfg.models and clusters >= node_count:
        if node_count < 2:
            raise UsageError("DiffPool needs graphs with at least 2 nodes", field="pool_clusters")
        clusters = node_count - 1
        logger.warning(f"⚠️ DiffPool clusters clamped from {cfg.pool_clusters} to {clusters} for {node_count}-node graphs")
    return clusters


def build_model_spec(cfg: ExperimentConfig, kind: ModelKind, node_count: int, seed: int) -> ModelSpec:
    """Seeded spec for one pooled model; every arm and fold of a repeat starts from the same init"""
    return ModelSpec(
        kind=kind,
        node_count=node_count,
        hidden_dim=cfg.hidden_dim,
        pool_clusters=pool_clusters_for(cfg, node_count),
        seed=derive_seed(seed, INIT_STREAM, cfg.models.index(kind)),
    )


def _check_dataset(cfg: ExperimentConfig, dataset: Dataset) -> None:
    if dataset.size < 2 or min(dataset.class_counts()) == 0:
        raise UsageError(
            f"dataset {dataset.name} needs at least two samples covering both labels, "
            f"got class counts {dataset.class_counts()}",
            field="dataset",
        )
    if cfg.federation.top_k > dataset.node_count:
        raise UsageError(
            f"top_k ({cfg.federation.top_k}) exceeds the node count ({dataset.node_count})",
            field="federation.top_k",
        )


def _warn_single_class_folds(partition: HospitalPartition) -> None:
    for hospital in range(partition.hospital_count):
        for fold in range(FOLD_COUNT):
            _, held_out = partition.split(hospital, fold)
            if len({sample.label for sample in held_out}) < 2:
                logger.warning(f"⚠️ Hospital {hospital} fold {fold} holds out a single class")


def _run_job(
    key: JobKey,
    partition: HospitalPartition,
    spec: ModelSpec,
    federation: FederationConfig,
) -> FederationOutcome:
    arm, repeat, fold, kind = key
    try:
        return ARM_RUNNERS[arm](partition, spec, federation, fold)
    except TrainingError as e:
        raise TrainingError(f"{arm.value} {kind.value}, repeat {repeat}, fold {fold}: {e}", e.sample_index)


def _execute(jobs: Dict[JobKey, tuple], max_workers: int) -> Dict[JobKey, FederationOutcome]:
    if max_workers <= 1:
        return {key: _run_job(key, *arguments) for key, arguments in jobs.items()}
    # threads share the partitions; joblib returns results in submission order
    results = Parallel(n_jobs=max_workers, prefer="threads")(
        delayed(_run_job)(key, *arguments) for key, arguments in jobs.items()
    )
    return dict(zip(jobs, results))


def _averaged_node_weights(
    outcomes: List[FederationOutcome], models: List[ModelKind], hospital_count: int
) -> Dict[Tuple[ModelKind, int], NodeWeightVector]:
    """
    Per (model, hospital slot) mean of the node-weight vectors over folds and repeats.

    Each repeat reshuffles the partition, so slot h pools a different set of
    subjects per repeat; the vectors are pooled by slot, not by subject.
    """
    averaged = {}
    for kind in models:
        for hospital in range(hospital_count):
            vectors = [
                outcome.hospitals[hospital].node_weights.as_array()
                for outcome in outcomes
                if outcome.model_kind == kind
            ]
            averaged[(kind, hospital)] = NodeWeightVector(
                weights=np.mean(vectors, axis=0).tolist(), model_kind=kind, hospital_id=hospital
            )
    return averaged


def _mode_result(
    arm: RunMode,
    outcomes: Dict[JobKey, FederationOutcome],
    cfg: ExperimentConfig,
) -> ModeResult:
    models = cfg.models
    hospital_count = cfg.federation.hospitals
    k = cfg.federation.top_k
    arm_outcomes = [(key, outcome) for key, outcome in outcomes.items() if key[0] == arm]

    accuracies = [
        AccuracyRecord(mode=arm, model=kind, repeat=repeat, fold=fold, hospital=h.hospital, accuracy=h.accuracy)
        for (_, repeat, fold, kind), outcome in arm_outcomes
        for h in outcome.hospitals
    ]
    node_weights = _averaged_node_weights([outcome for _, outcome in arm_outcomes], models, hospital_count)

    names = [kind.value for kind in models]
    hospital_matrices = [
        hospital_rep_matrix([node_weights[(kind, hospital)] for kind in models], k, models=names)
        for hospital in range(hospital_count)
    ]
    average = average_rep_matrix(hospital_matrices)
    strengths = model_strength(average)
    selected = models[select_most_reproducible(strengths)]
    selected_weights = [node_weights[(selected, hospital)] for hospital in range(hospital_count)]

    round_summaries = [
        RoundSummary(
            model=kind,
            repeat=repeat,
            fold=fold,
            round=trace.round_index,
            train_losses=trace.train_losses,
            validation_accuracies=trace.validation_accuracies,
            max_mean_deviation=trace.max_mean_deviation(),
        )
        for (_, repeat, fold, kind), outcome in arm_outcomes
        for trace in outcome.rounds
    ]
    logger.info(f"📊 {arm.value}: strengths {dict(zip(names, strengths.scores))}, selected {selected.value}")
    return ModeResult(
        mode=arm,
        accuracies=accuracies,
        node_weights=[node_weights[(kind, hospital)] for kind in models for hospital in range(hospital_count)],
        hospital_matrices=hospital_matrices,
        average_matrix=average,
        strengths=strengths,
        selected_model=selected,
        biomarkers=select_biomarkers(selected_weights, k),
        hospital_biomarkers=[select_biomarkers([weights], k) for weights in selected_weights],
        round_summaries=round_summaries,
    )


def run_experiment(
    cfg: ExperimentConfig,
    store: Optional[ResultStore] = None,
    write_outputs: bool = True,
) -> RunResult:
    """Full pipeline: partition, train both arms, analyse reproducibility, persist result and report"""
    started = time.perf_counter()
    run_id = compute_run_id(cfg)
    logger.info(f"🔧 Starting run {run_id}: mode={cfg.mode.value} models={[m.value for m in cfg.models]}")

    dataset, planted = load_dataset(cfg.dataset)
    _check_dataset(cfg, dataset)
    if planted:
        logger.info(f"🌱 Planted nodes: {sorted(planted)}")

    seeds = [cfg.federation.seed + repeat for repeat in range(cfg.repeats)]
    jobs: Dict[JobKey, tuple] = {}
    for repeat, seed in enumerate(seeds):
        federation = cfg.federation.model_copy(update={"seed": seed})
        partition = partition_hospitals(dataset, cfg.federation.hospitals, derive_seed(seed, PARTITION_STREAM))
        _warn_single_class_folds(partition)
        for kind in cfg.models:
            spec = build_model_spec(cfg, kind, dataset.node_count, seed)
            for arm in cfg.mode.arms():
                for fold in range(FOLD_COUNT):
                    jobs[(arm, repeat, fold, kind)] = (partition, spec, federation)

    logger.info(f"📊 Running {len(jobs)} jobs with {cfg.max_workers} worker(s)")
    outcomes = _execute(jobs, cfg.max_workers)

    result = RunResult(
        run_id=run_id,
        config=cfg,
        node_count=dataset.node_count,
        seeds=seeds,
        modes=[_mode_result(arm, outcomes, cfg) for arm in cfg.mode.arms()],
        wall_clock_seconds=time.perf_counter() - started,
    )
    if write_outputs:
        store = store or ResultStore(cfg.output_dir)
        store.save(result)
        write_report(result, store.run_dir(run_id) / "report")
    logger.info(f"✅ Run {run_id} finished in {result.wall_clock_seconds:.1f}s")
    return result
