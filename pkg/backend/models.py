from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Optional, List, Dict, Tuple
from enum import Enum

import numpy as np


class ModelKind(str, Enum):
    GCN = "GCN"
    DIFFPOOL = "DiffPool"


class RunMode(str, Enum):
    BASELINE = "baseline"
    FEDERATED = "federated"
    BOTH = "both"

    def arms(self) -> List["RunMode"]:
        """Concrete training arms this mode runs, baseline first"""
        if self is RunMode.BOTH:
            return [RunMode.BASELINE, RunMode.FEDERATED]
        return [self]


class DatasetKind(str, Enum):
    CONNECTOME = "connectome"
    IMAGE = "image"
    SYNTHETIC = "synthetic"


class Representation(str, Enum):
    GRAPH = "graph"  # pixel-pair intensity differences
    IMAGE = "image"  # the intensity matrix itself


SYMMETRY_TOLERANCE = 1e-9


def _readonly_matrix(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


# Graph data

class GraphSample(BaseModel):
    """One subject: an N x N weighted adjacency matrix and a binary label"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    adjacency: np.ndarray
    label: int
    subject_id: str

    @field_validator("adjacency", mode="before")
    @classmethod
    def _check_adjacency(cls, value):
        array = np.array(value, dtype=np.float64, copy=True)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("adjacency contains non-finite values")
        if np.any(array < 0):
            raise ValueError("adjacency contains negative weights")
        if np.max(np.abs(array - array.T), initial=0.0) > SYMMETRY_TOLERANCE:
            raise ValueError("adjacency is not symmetric")
        if np.any(np.diag(array) != 0):
            raise ValueError("adjacency diagonal must be zero")
        array.setflags(write=False)
        return array

    @field_validator("label")
    @classmethod
    def _check_label(cls, value: int) -> int:
        if value not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {value}")
        return value

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]


class Dataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    samples: List[GraphSample]
    node_count: int

    @model_validator(mode="after")
    def _check_node_count(self):
        for sample in self.samples:
            if sample.node_count != self.node_count:
                raise ValueError(
                    f"sample {sample.subject_id} has {sample.node_count} nodes, dataset has {self.node_count}"
                )
        return self

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> List[int]:
        return [sample.label for sample in self.samples]

    def class_counts(self) -> Tuple[int, int]:
        labels = self.labels
        return labels.count(0), labels.count(1)


class HospitalPartition(BaseModel):
    """H disjoint hospital datasets, each with a 3-way fold label per sample"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    hospitals: List[Dataset]
    folds: List[List[int]]

    @model_validator(mode="after")
    def _check_folds(self):
        if len(self.hospitals) != len(self.folds):
            raise ValueError("one fold assignment per hospital is required")
        for dataset, folds in zip(self.hospitals, self.folds):
            if len(folds) != dataset.size:
                raise ValueError(f"hospital {dataset.name} has {dataset.size} samples but {len(folds)} fold labels")
            if any(fold not in (0, 1, 2) for fold in folds):
                raise ValueError("fold labels must be 0, 1 or 2")
        return self

    @property
    def hospital_count(self) -> int:
        return len(self.hospitals)

    def split(self, hospital: int, fold_index: int) -> Tuple[List[GraphSample], List[GraphSample]]:
        """Training samples (the other two folds) and the held-out fold of one hospital"""
        train, held_out = [], []
        for sample, fold in zip(self.hospitals[hospital].samples, self.folds[hospital]):
            (held_out if fold == fold_index else train).append(sample)
        return train, held_out


# GNN models

class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ModelKind
    node_count: int = Field(ge=1)
    hidden_dim: int = Field(16, ge=1)
    pool_clusters: int = Field(8, ge=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_clusters(self):
        if self.kind == ModelKind.DIFFPOOL and self.pool_clusters >= self.node_count:
            raise ValueError(
                f"pool_clusters ({self.pool_clusters}) must be smaller than node_count ({self.node_count})"
            )
        return self


class ModelWeights(BaseModel):
    """Immutable snapshot of a model's named parameter matrices, in layer order"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    parameters: Dict[str, np.ndarray]

    @field_validator("parameters", mode="before")
    @classmethod
    def _freeze(cls, value):
        return {name: _readonly_matrix(array) for name, array in dict(value).items()}

    def names(self) -> List[str]:
        return list(self.parameters)

    def shapes(self) -> List[Tuple[int, ...]]:
        return [array.shape for array in self.parameters.values()]

    def scaled(self, alpha: float) -> "ModelWeights":
        return ModelWeights(parameters={name: alpha * array for name, array in self.parameters.items()})

    def equals(self, other: "ModelWeights") -> bool:
        """Bit-exact equality of names, shapes and values"""
        if self.names() != other.names():
            return False
        return all(
            array.shape == other.parameters[name].shape
            and np.array_equal(array.view(np.uint64), other.parameters[name].view(np.uint64))
            for name, array in self.parameters.items()
        )

    def max_abs_difference(self, other: "ModelWeights") -> float:
        return max(
            float(np.max(np.abs(array - other.parameters[name]), initial=0.0))
            for name, array in self.parameters.items()
        )


class NodeWeightVector(BaseModel):
    """Per-node discriminative weights extracted from a trained model"""
    weights: List[float]
    model_kind: ModelKind
    hospital_id: Optional[int] = None

    @field_validator("weights")
    @classmethod
    def _check_finite(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("weights must not be empty")
        if not all(np.isfinite(value)):
            raise ValueError("weights must be finite")
        return value

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


# Federation and experiment configuration

def _default_learning_rates() -> Dict[ModelKind, float]:
    return {ModelKind.DIFFPOOL: 1e-4, ModelKind.GCN: 1e-5}


class FederationConfig(BaseModel):
    hospitals: int = Field(3, ge=1)
    rounds: int = Field(5, ge=1)
    epochs: int = Field(100, ge=1)
    batch_size: int = Field(1, ge=1)
    learning_rates: Dict[ModelKind, float] = Field(default_factory=_default_learning_rates)
    top_k: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)

    @field_validator("learning_rates")
    @classmethod
    def _check_learning_rates(cls, value: Dict[ModelKind, float]) -> Dict[ModelKind, float]:
        for kind, rate in value.items():
            if not rate > 0:
                raise ValueError(f"learning rate for {kind.value} must be positive")
        return value

    def learning_rate(self, kind: ModelKind) -> float:
        defaults = _default_learning_rates()
        return self.learning_rates.get(kind, defaults[kind])


class SyntheticSpec(BaseModel):
    n_nodes: int = Field(35, ge=2)
    samples: int = Field(300, ge=2)
    planted_nodes: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    signal_strength: float = Field(1.0, ge=0)
    noise: float = Field(0.2, ge=0)
    seed: int = Field(0, ge=0)


class DatasetSource(BaseModel):
    kind: DatasetKind = DatasetKind.SYNTHETIC
    matrix_file: Optional[str] = None
    labels_file: Optional[str] = None
    image_file: Optional[str] = None
    side: int = Field(28, ge=1)
    downsample: int = Field(1, ge=1)
    representation: Representation = Representation.GRAPH
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)

    @model_validator(mode="after")
    def _check_files(self):
        if self.kind == DatasetKind.CONNECTOME and not (self.matrix_file and self.labels_file):
            raise ValueError("connectome sources need matrix_file and labels_file")
        if self.kind == DatasetKind.IMAGE and not (self.image_file and self.labels_file):
            raise ValueError("image sources need image_file and labels_file")
        return self


class ExperimentConfig(BaseModel):
    name: str = "experiment"
    dataset: DatasetSource = Field(default_factory=DatasetSource)
    models: List[ModelKind] = Field(default_factory=lambda: [ModelKind.DIFFPOOL, ModelKind.GCN])
    federation: FederationConfig = Field(default_factory=FederationConfig)
    mode: RunMode = RunMode.BOTH
    repeats: int = Field(1, ge=1)
    hidden_dim: int = Field(16, ge=1)
    pool_clusters: int = Field(8, ge=1)
    output_dir: str = "results"
    max_workers: int = Field(1, ge=1)

    @field_validator("models")
    @classmethod
    def _check_models(cls, value: List[ModelKind]) -> List[ModelKind]:
        if not value:
            raise ValueError("model pool must not be empty")
        if len(set(value)) != len(value):
            raise ValueError("model pool must not repeat a model")
        return value


# Reproducibility

class TopKSet(BaseModel):
    indices: List[int]
    k: int
    hospital_id: Optional[int] = None
    model: Optional[str] = None

    @model_validator(mode="after")
    def _check_indices(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("top-k indices must be distinct")
        if len(self.indices) != self.k:
            raise ValueError(f"expected {self.k} indices, got {len(self.indices)}")
        if any(index < 0 for index in self.indices):
            raise ValueError("top-k indices must be non-negative")
        return self


class ReproducibilityMatrix(BaseModel):
    """M x M pairwise top-K overlap ratios between models"""
    values: List[List[float]]
    models: List[str]
    k: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_structure(self):
        size = len(self.models)
        if len(self.values) != size or any(len(row) != size for row in self.values):
            raise ValueError(f"matrix must be {size} x {size}")
        for i in range(size):
            if self.values[i][i] != 1.0:
                raise ValueError("diagonal must be exactly 1")
            for j in range(size):
                value = self.values[i][j]
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"entry ({i}, {j}) = {value} outside [0, 1]")
                if abs(value - self.values[j][i]) > 1e-12:
                    raise ValueError(f"matrix is not symmetric at ({i}, {j})")
        return self

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


class ModelStrength(BaseModel):
    scores: List[float]
    models: List[str]


class Biomarker(BaseModel):
    rank: int
    node: int
    weight: float


# Run results

class AccuracyRecord(BaseModel):
    mode: RunMode
    model: ModelKind
    repeat: int
    fold: int
    hospital: int
    accuracy: float


class RoundSummary(BaseModel):
    model: ModelKind
    repeat: int
    fold: int
    round: int
    train_losses: List[float]
    validation_accuracies: List[float]
    max_mean_deviation: float


class ModeResult(BaseModel):
    mode: RunMode
    accuracies: List[AccuracyRecord]
    node_weights: List[NodeWeightVector]
    hospital_matrices: List[ReproducibilityMatrix]
    average_matrix: ReproducibilityMatrix
    strengths: ModelStrength
    selected_model: ModelKind
    biomarkers: List[Biomarker]
    hospital_biomarkers: List[List[Biomarker]]
    round_summaries: List[RoundSummary] = Field(default_factory=list)


class RunResult(BaseModel):
    run_id: str
    config: ExperimentConfig
    node_count: int
    seeds: List[int]
    modes: List[ModeResult]
    wall_clock_seconds: float

    def mode_result(self, mode: RunMode) -> ModeResult:
        for result in self.modes:
            if result.mode == mode:
                return result
        raise KeyError(mode.value)


class AccuracySummary(BaseModel):
    mode: RunMode
    model: ModelKind
    mean: float
    minimum: float
    maximum: float
    count: int


class AccuracyOverview(BaseModel):
    run_id: str
    summaries: List[AccuracySummary]
    selected_models: Dict[str, ModelKind]
