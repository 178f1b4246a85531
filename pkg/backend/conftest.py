import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from models import DatasetSource, ExperimentConfig, FederationConfig, ModelKind, SyntheticSpec


def small_config(tmp_path, **changes) -> ExperimentConfig:
    """A few-second experiment on an 8-node planted dataset"""
    document = dict(
        name="tiny",
        dataset=DatasetSource(synthetic=SyntheticSpec(n_nodes=8, samples=36, planted_nodes=[0, 1], seed=1)),
        federation=FederationConfig(
            rounds=2,
            epochs=2,
            top_k=3,
            learning_rates={ModelKind.GCN: 0.01, ModelKind.DIFFPOOL: 0.01},
        ),
        hidden_dim=4,
        pool_clusters=3,
        output_dir=str(tmp_path / "results"),
    )
    document.update(changes)
    return ExperimentConfig(**document)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
