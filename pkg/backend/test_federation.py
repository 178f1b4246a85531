import math

import numpy as np
import pytest

import federation
from data import partition_hospitals, synth_planted
from errors import AggregationError, ParameterError, TrainingError
from federation import (
    derive_seed,
    evaluate,
    federated_average,
    local_update,
    run_baseline,
    run_federation,
)
from gnn import build_model
from numerics import backward, cross_entropy
from models import FederationConfig, HospitalPartition, ModelKind, ModelSpec, ModelWeights, RunMode


@pytest.fixture
def dataset():
    data, _ = synth_planted(8, 36, [0, 1], 1.0, 0.2, seed=1)
    return data


def fed_config(**changes):
    settings = dict(rounds=2, epochs=2, learning_rates={ModelKind.GCN: 0.01, ModelKind.DIFFPOOL: 0.01}, seed=0)
    settings.update(changes)
    return FederationConfig(**settings)


def gcn_spec():
    return ModelSpec(kind=ModelKind.GCN, node_count=8, hidden_dim=4, seed=11)


def weights_of(value):
    return ModelWeights(parameters={"w": np.full((2, 2), value)})


def test_default_federation_settings():
    """Defaults are H=3, C=5, E=100, B=1, K=20 with DiffPool lr 1e-4."""
    cfg = FederationConfig()
    assert (cfg.hospitals, cfg.rounds, cfg.epochs, cfg.batch_size, cfg.top_k) == (3, 5, 100, 1, 20)
    assert cfg.learning_rate(ModelKind.DIFFPOOL) == 1e-4
    assert cfg.learning_rate(ModelKind.GCN) == 1e-5


def test_federated_average_is_entrywise_mean():
    """The global weights are the arithmetic mean of the local weights."""
    averaged = federated_average([weights_of(1.0), weights_of(2.0), weights_of(6.0)])
    assert np.array_equal(averaged.parameters["w"], np.full((2, 2), 3.0))


def test_federated_average_single_hospital_is_identity():
    """H = 1 returns the local weights unchanged."""
    local = ModelWeights(parameters={"w": np.random.default_rng(0).normal(size=(3, 2))})
    assert federated_average([local]).equals(local)


def test_federated_average_uses_compensated_summation():
    """Cancelling large terms do not swallow small ones."""
    averaged = federated_average([weights_of(1e16), weights_of(1.0), weights_of(-1e16)])
    assert averaged.parameters["w"][0, 0] == pytest.approx(1.0 / 3.0, rel=1e-15)


def test_federated_average_rejects_bad_input():
    """Empty lists and mismatched snapshots cannot be averaged."""
    with pytest.raises(AggregationError):
        federated_average([])
    with pytest.raises(AggregationError):
        federated_average([weights_of(1.0), ModelWeights(parameters={"w": np.zeros((3, 2))})])
    with pytest.raises(AggregationError):
        federated_average([weights_of(1.0), ModelWeights(parameters={"v": np.zeros((2, 2))})])


def test_derive_seed_is_stable_and_key_sensitive():
    """Seeds depend on every key and nothing else."""
    assert derive_seed(0, 1, 2, 3) == derive_seed(0, 1, 2, 3)
    assert derive_seed(0, 1, 2, 3) != derive_seed(0, 1, 2, 4)
    assert derive_seed(0, 1) != derive_seed(1, 1)


def test_federation_rounds_average_exactly(dataset):
    """After every round each global entry is the hospital mean within 1e-12."""
    partition = partition_hospitals(dataset, 3, seed=0)
    outcome = run_federation(partition, gcn_spec(), fed_config(rounds=3), fold_index=0)
    assert outcome.mode == RunMode.FEDERATED
    assert [trace.round_index for trace in outcome.rounds] == [0, 1, 2]
    for trace in outcome.rounds:
        assert len(trace.local_weights) == 3
        assert trace.max_mean_deviation() <= 1e-12
        for name, averaged in trace.global_weights.parameters.items():
            for index in np.ndindex(averaged.shape):
                exact = math.fsum(w.parameters[name][index] for w in trace.local_weights) / 3
                assert abs(averaged[index] - exact) <= 1e-12
    assert outcome.global_weights.equals(outcome.rounds[-1].global_weights)


def test_federation_counts_gradient_steps(dataset):
    """Each hospital takes C x E x ceil(train / B) steps."""
    partition = partition_hospitals(dataset, 3, seed=0)
    cfg = fed_config(batch_size=3)
    outcome = run_federation(partition, gcn_spec(), cfg, fold_index=1)
    for hospital in outcome.hospitals:
        train, _ = partition.split(hospital.hospital, 1)
        assert hospital.gradient_steps == cfg.rounds * cfg.epochs * math.ceil(len(train) / 3)
        assert 0.0 <= hospital.accuracy <= 1.0
        assert len(hospital.node_weights.weights) == 8
        assert hospital.node_weights.hospital_id == hospital.hospital


def test_single_hospital_federation_matches_baseline(dataset):
    """With H = 1 federated training and the baseline are bit-identical."""
    partition = partition_hospitals(dataset, 1, seed=0)
    cfg = fed_config(hospitals=1, rounds=3)
    federated = run_federation(partition, gcn_spec(), cfg, fold_index=2)
    baseline = run_baseline(partition, gcn_spec(), cfg, fold_index=2)
    assert federated.global_weights.equals(baseline.hospitals[0].weights)
    assert federated.hospitals[0].accuracy == baseline.hospitals[0].accuracy
    assert federated.hospitals[0].node_weights == baseline.hospitals[0].node_weights


def test_baseline_emits_no_round_traces(dataset):
    """Baseline hospitals train alone and report no rounds."""
    partition = partition_hospitals(dataset, 3, seed=0)
    outcome = run_baseline(partition, gcn_spec(), fed_config(), fold_index=0)
    assert outcome.mode == RunMode.BASELINE
    assert outcome.rounds == []
    assert outcome.global_weights is None
    assert len(outcome.hospitals) == 3


def test_federation_is_deterministic(dataset):
    """Identical inputs give bit-identical global weights."""
    partition = partition_hospitals(dataset, 3, seed=0)
    spec = ModelSpec(kind=ModelKind.DIFFPOOL, node_count=8, hidden_dim=4, pool_clusters=3, seed=5)
    first = run_federation(partition, spec, fed_config(), fold_index=0)
    second = run_federation(partition, spec, fed_config(), fold_index=0)
    assert first.global_weights.equals(second.global_weights)
    assert [h.node_weights for h in first.hospitals] == [h.node_weights for h in second.hospitals]


def test_local_update_trains_a_copy(dataset):
    """LocalUpdate leaves the broadcast weights untouched and returns new ones."""
    partition = partition_hospitals(dataset, 3, seed=0)
    train, held_out = partition.split(0, 0)
    start = build_model(gcn_spec()).snapshot()
    updated = local_update(start, train, gcn_spec(), fed_config(epochs=1))
    assert start.equals(build_model(gcn_spec()).snapshot())
    assert not updated.equals(start)
    assert 0.0 <= evaluate(updated, held_out, gcn_spec()) <= 1.0


def test_fold_index_must_be_valid(dataset):
    """Only folds 0, 1 and 2 exist."""
    partition = partition_hospitals(dataset, 3, seed=0)
    with pytest.raises(ParameterError):
        run_federation(partition, gcn_spec(), fed_config(), fold_index=3)


def test_training_errors_carry_round_and_hospital(dataset, monkeypatch):
    """A failing step is reported with its round, hospital, epoch and batch."""

    def failing_step(model, batch, lr):
        raise TrainingError("non-finite loss", 0)

    monkeypatch.setattr(federation, "sgd_step", failing_step)
    partition = partition_hospitals(dataset, 3, seed=0)
    with pytest.raises(TrainingError) as excinfo:
        run_federation(partition, gcn_spec(), fed_config(), fold_index=0)
    message = str(excinfo.value)
    assert "round 0" in message
    assert "hospital 0, epoch 0, batch 0" in message
    assert excinfo.value.sample_index == 0


def test_federated_average_is_linear():
    """Averaging scaled snapshots equals scaling the average."""
    rng = np.random.default_rng(3)
    locals_ = [ModelWeights(parameters={"w": rng.normal(size=(3, 4))}) for _ in range(3)]
    scaled = federated_average([w.scaled(2.5) for w in locals_])
    assert scaled.max_abs_difference(federated_average(locals_).scaled(2.5)) <= 1e-12


def test_identical_hospitals_agree_with_their_average(dataset):
    """Hospitals holding the same data with full-batch updates produce the same local weights."""
    single = partition_hospitals(dataset, 1, seed=0)
    replicated = HospitalPartition(hospitals=single.hospitals * 3, folds=single.folds * 3)
    train, _ = replicated.split(0, 0)
    outcome = run_federation(replicated, gcn_spec(), fed_config(hospitals=3, batch_size=len(train)), fold_index=0)
    for trace in outcome.rounds:
        for local in trace.local_weights:
            assert local.max_abs_difference(trace.global_weights) <= 1e-12


def test_baseline_hospitals_diverge_on_different_data(dataset):
    """Independent hospitals end with different weights."""
    partition = partition_hospitals(dataset, 3, seed=0)
    outcome = run_baseline(partition, gcn_spec(), fed_config(), fold_index=0)
    assert not outcome.hospitals[0].weights.equals(outcome.hospitals[1].weights)


def test_single_full_batch_update_matches_mean_gradient(dataset):
    """One epoch with one full batch moves the weights by -lr times the mean per-sample gradient."""
    partition = partition_hospitals(dataset, 3, seed=0)
    train, _ = partition.split(1, 2)
    start = build_model(gcn_spec()).snapshot()
    cfg = fed_config(epochs=1, batch_size=len(train))
    updated = local_update(start, train, gcn_spec(), cfg)

    gradients = {name: np.zeros_like(values) for name, values in start.parameters.items()}
    for sample in train:
        model = build_model(gcn_spec())
        backward(cross_entropy(model.forward(sample), sample.label))
        for name, node in model.parameters.items():
            gradients[name] += node.gradient() / len(train)
    lr = cfg.learning_rate(ModelKind.GCN)
    for name, values in start.parameters.items():
        assert np.allclose(updated.parameters[name], values - lr * gradients[name], rtol=0, atol=1e-12)


def test_untrained_models_score_chance_on_signal_free_data():
    """Over 20 seeds a fresh model averages about 50% on labels unrelated to the graphs."""
    accuracies = []
    for seed in range(20):
        data, _ = synth_planted(8, 40, [0], 0.0, 0.3, seed=seed)
        spec = ModelSpec(kind=ModelKind.GCN, node_count=8, hidden_dim=4, seed=seed)
        accuracies.append(evaluate(build_model(spec).snapshot(), data.samples, spec))
    assert np.mean(accuracies) == pytest.approx(0.5, abs=0.1)


@pytest.mark.parametrize("runner", [run_federation, run_baseline])
def test_diverging_training_is_a_training_error(dataset, runner):
    """An exploding learning rate fails with a training error that names the hospital and round."""
    partition = partition_hospitals(dataset, 3, seed=0)
    cfg = fed_config(rounds=1, epochs=1, batch_size=100, learning_rates={ModelKind.GCN: 1e306})
    with pytest.raises(TrainingError) as excinfo, np.errstate(over="ignore", invalid="ignore"):
        runner(partition, gcn_spec(), cfg, fold_index=0)
    message = str(excinfo.value)
    assert "hospital 0" in message
    assert "round 0" in message
