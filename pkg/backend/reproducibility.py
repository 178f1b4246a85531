"""
Top-K biomarker overlap between models and hospitals.

A model's top-K set holds the K nodes with the largest absolute weight (ties
go to the lower node index). Two models' reproducibility is |r_i & r_j| / K;
hospital matrices are averaged entry-wise, and the model with the largest row
sum minus one (node strength) is the most reproducible.
"""
import logging
from typing import List, Optional, Sequence, Union

import numpy as np

from errors import ParameterError
from models import Biomarker, ModelStrength, NodeWeightVector, ReproducibilityMatrix, TopKSet

logger = logging.getLogger(__name__)

WeightsLike = Union[NodeWeightVector, Sequence[float], np.ndarray]


def _weights(w: WeightsLike) -> np.ndarray:
    if isinstance(w, NodeWeightVector):
        return w.as_array()
    return np.asarray(w, dtype=np.float64).ravel()


def _ranking(w: WeightsLike) -> np.ndarray:
    # stable sort keeps lower indices first among equal magnitudes
    return np.argsort(-np.abs(_weights(w)), kind="stable")


def top_k(w: WeightsLike, k: int) -> TopKSet:
    values = _weights(w)
    if not 1 <= k <= values.size:
        raise ParameterError(f"k must lie in [1, {values.size}], got {k}")
    indices = sorted(int(i) for i in _ranking(values)[:k])
    if isinstance(w, NodeWeightVector):
        return TopKSet(indices=indices, k=k, hospital_id=w.hospital_id, model=w.model_kind.value)
    return TopKSet(indices=indices, k=k)


def rep_score(r_i: TopKSet, r_j: TopKSet) -> float:
    if r_i.k != r_j.k:
        raise ParameterError(f"top-k sets use different K ({r_i.k} vs {r_j.k})")
    return len(set(r_i.indices) & set(r_j.indices)) / r_i.k


def _model_names(vectors: Sequence[WeightsLike], models: Optional[Sequence[str]]) -> List[str]:
    if models is not None:
        if len(models) != len(vectors):
            raise ParameterError(f"{len(models)} model names for {len(vectors)} weight vectors")
        return list(models)
    return [v.model_kind.value if isinstance(v, NodeWeightVector) else f"model{i}" for i, v in enumerate(vectors)]


def hospital_rep_matrix(
    weights_per_model: Sequence[WeightsLike],
    k: int,
    models: Optional[Sequence[str]] = None,
) -> ReproducibilityMatrix:
    """M x M overlap matrix for one hospital's model pool"""
    if not weights_per_model:
        raise ParameterError("need at least one weight vector")
    sizes = {_weights(w).size for w in weights_per_model}
    if len(sizes) != 1:
        raise ParameterError(f"weight vectors have different lengths: {sorted(sizes)}")
    names = _model_names(weights_per_model, models)
    sets = [top_k(w, k) for w in weights_per_model]
    size = len(sets)
    values = [[rep_score(sets[i], sets[j]) for j in range(size)] for i in range(size)]
    return ReproducibilityMatrix(values=values, models=names, k=k)


def average_rep_matrix(per_hospital: Sequence[ReproducibilityMatrix]) -> ReproducibilityMatrix:
    """Sum the hospital matrices, then divide by H"""
    if not per_hospital:
        raise ParameterError("need at least one hospital matrix")
    first = per_hospital[0]
    for matrix in per_hospital[1:]:
        if matrix.models != first.models or matrix.k != first.k:
            raise ParameterError(
                f"hospital matrices disagree: models {matrix.models} K={matrix.k} vs {first.models} K={first.k}"
            )
    total = np.zeros((len(first.models), len(first.models)))
    for matrix in per_hospital:
        total = total + matrix.as_array()
    averaged = total / len(per_hospital)
    return ReproducibilityMatrix(values=averaged.tolist(), models=list(first.models), k=first.k)


def model_strength(avg: ReproducibilityMatrix) -> ModelStrength:
    """s_i = (sum_m R[i, m]) - 1"""
    return ModelStrength(scores=[float(sum(row)) - 1.0 for row in avg.values], models=list(avg.models))


def select_most_reproducible(strengths: ModelStrength) -> int:
    """Index of the strongest model; the earliest model in the pool wins ties"""
    if not strengths.scores:
        raise ParameterError("no model strengths to select from")
    best = 0
    for index, score in enumerate(strengths.scores):
        if score > strengths.scores[best]:
            best = index
    return best


def select_biomarkers(hospital_weights: Sequence[WeightsLike], k: int) -> List[Biomarker]:
    """Top-K nodes of the hospital-averaged absolute weights, strongest first"""
    if not hospital_weights:
        raise ParameterError("need at least one hospital weight vector")
    averaged = np.abs(np.mean([_weights(w) for w in hospital_weights], axis=0))
    if not 1 <= k <= averaged.size:
        raise ParameterError(f"k must lie in [1, {averaged.size}], got {k}")
    ranked = _ranking(averaged)[:k]
    return [Biomarker(rank=rank, node=int(node), weight=float(averaged[node])) for rank, node in enumerate(ranked, start=1)]
