"""
Dataset ingestion, image-to-graph conversion, hospital partitioning and the
planted-biomarker generator.

File formats (comma-separated text, one sample per line):
- connectome matrix file: N*N values of a flattened row-major adjacency
- image file: side*side intensities in [0, 255]
- labels file: one 0/1 integer per line
"""
import logging
import math
from pathlib import Path
from typing import FrozenSet, Iterable, List, Tuple

import numpy as np
from pydantic import ValidationError
from sklearn.model_selection import StratifiedKFold

from errors import DataFormatError, ParameterError, PartitionError
from models import (
    Dataset,
    DatasetKind,
    DatasetSource,
    GraphSample,
    HospitalPartition,
    Representation,
    SYMMETRY_TOLERANCE,
)

logger = logging.getLogger(__name__)

FOLD_COUNT = 3


def _read_rows(path) -> List[Tuple[int, np.ndarray]]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DataFormatError(f"{path}: cannot read file: {e}")
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            values = np.array([float(value) for value in line.split(",")], dtype=np.float64)
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: expected comma-separated numbers")
        if not np.all(np.isfinite(values)):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        rows.append((lineno, values))
    return rows


def read_labels(path) -> List[int]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DataFormatError(f"{path}: cannot read file: {e}")
    labels = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            label = int(line.strip())
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: label is not an integer")
        if label not in (0, 1):
            raise DataFormatError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
        labels.append(label)
    if not labels:
        raise DataFormatError(f"{path}: labels file is empty")
    return labels


def _make_sample(adjacency: np.ndarray, label: int, subject_id: str, where: str) -> GraphSample:
    try:
        return GraphSample(adjacency=adjacency, label=label, subject_id=subject_id)
    except ValidationError as e:
        raise DataFormatError(f"{where}: invalid sample: {e.errors()[0]['msg']}")


def load_connectomes(matrix_file, labels_file, name: str = None) -> Dataset:
    """Read flattened N x N connectomes and their labels"""
    labels = read_labels(labels_file)
    rows = _read_rows(matrix_file)
    if len(rows) != len(labels):
        raise DataFormatError(f"{matrix_file}: {len(rows)} matrices but {len(labels)} labels in {labels_file}")

    samples = []
    node_count = None
    for index, ((lineno, values), label) in enumerate(zip(rows, labels)):
        where = f"{matrix_file}:{lineno}"
        n = math.isqrt(values.size)
        if n * n != values.size:
            raise DataFormatError(f"{where}: {values.size} values is not a perfect square")
        if node_count is None:
            node_count = n
        elif n != node_count:
            raise DataFormatError(f"{where}: {n} nodes, previous rows have {node_count}")
        matrix = values.reshape(n, n)
        if np.any(matrix < 0):
            raise DataFormatError(f"{where}: negative connectivity weight")
        if np.max(np.abs(matrix - matrix.T), initial=0.0) > SYMMETRY_TOLERANCE:
            logger.warning(f"⚠️ {where}: asymmetric matrix symmetrized as (A + A^T) / 2")
            matrix = (matrix + matrix.T) / 2.0
        np.fill_diagonal(matrix, 0.0)
        samples.append(_make_sample(matrix, label, f"subject-{index:04d}", where))

    dataset = Dataset(name=name or Path(matrix_file).stem, samples=samples, node_count=node_count)
    logger.info(f"📊 Loaded {dataset.size} connectomes with {node_count} nodes from {matrix_file}")
    return dataset


def _check_pixels(pixels, side: int) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64).ravel()
    if pixels.size != side * side:
        raise DataFormatError(f"expected {side * side} pixels for side {side}, got {pixels.size}")
    return pixels


def image_to_graph(pixels, side: int) -> np.ndarray:
    """Complete pixel graph weighted by |I_p - I_q| / 255"""
    pixels = _check_pixels(pixels, side)
    if np.any(pixels < 0) or np.any(pixels > 255):
        raise DataFormatError("pixel intensities must lie in [0, 255]")
    return np.abs(np.subtract.outer(pixels, pixels)) / 255.0


def image_to_matrix(pixels, side: int) -> np.ndarray:
    """The image itself as a side x side graph: intensities / 255, symmetrized, zero diagonal"""
    pixels = _check_pixels(pixels, side)
    if np.any(pixels < 0) or np.any(pixels > 255):
        raise DataFormatError("pixel intensities must lie in [0, 255]")
    matrix = pixels.reshape(side, side) / 255.0
    matrix = (matrix + matrix.T) / 2.0
    np.fill_diagonal(matrix, 0.0)
    return matrix


def downsample_image(pixels, side: int, factor: int) -> np.ndarray:
    """Block-mean pooling by factor; returns a flat (side / factor)^2 image"""
    if factor < 1 or side % factor:
        raise ParameterError(f"downsample factor {factor} does not divide image side {side}")
    pixels = _check_pixels(pixels, side)
    out = side // factor
    return pixels.reshape(out, factor, out, factor).mean(axis=(1, 3)).ravel()


def load_images(
    image_file,
    labels_file,
    side: int,
    downsample: int = 1,
    representation: Representation = Representation.GRAPH,
    name: str = None,
) -> Dataset:
    labels = read_labels(labels_file)
    rows = _read_rows(image_file)
    if len(rows) != len(labels):
        raise DataFormatError(f"{image_file}: {len(rows)} images but {len(labels)} labels in {labels_file}")
    if side % downsample:
        raise ParameterError(f"downsample factor {downsample} does not divide image side {side}")

    reduced_side = side // downsample
    convert = image_to_graph if representation == Representation.GRAPH else image_to_matrix
    samples = []
    for index, ((lineno, pixels), label) in enumerate(zip(rows, labels)):
        where = f"{image_file}:{lineno}"
        try:
            reduced = downsample_image(pixels, side, downsample)
            matrix = convert(reduced, reduced_side)
        except DataFormatError as e:
            raise DataFormatError(f"{where}: {e}")
        samples.append(_make_sample(matrix, label, f"image-{index:04d}", where))

    node_count = samples[0].node_count
    dataset = Dataset(name=name or Path(image_file).stem, samples=samples, node_count=node_count)
    logger.info(
        f"📊 Loaded {dataset.size} images as {representation.value} inputs with {node_count} nodes "
        f"(side {side}, downsample {downsample})"
    )
    return dataset


def synth_planted(
    n_nodes: int,
    s_samples: int,
    planted_nodes: Iterable[int],
    signal_strength: float,
    noise: float,
    seed: int,
) -> Tuple[Dataset, FrozenSet[int]]:
    """
    Balanced two-class connectomes with a known discriminative node set.

    Class 1 adds signal_strength to every edge incident to a planted node;
    both classes add symmetric half-normal noise scaled by noise.
    """
    planted = frozenset(int(node) for node in planted_nodes)
    if not planted:
        raise ParameterError("planted node set must not be empty")
    if any(node < 0 or node >= n_nodes for node in planted):
        raise ParameterError(f"planted nodes must lie in [0, {n_nodes})")
    if signal_strength < 0 or noise < 0:
        raise ParameterError("signal strength and noise must be non-negative")

    rng = np.random.default_rng(seed)
    labels = rng.permutation([0] * (s_samples // 2) + [1] * (s_samples - s_samples // 2))
    mask = np.zeros((n_nodes, n_nodes))
    mask[sorted(planted), :] = 1.0
    mask[:, sorted(planted)] = 1.0
    np.fill_diagonal(mask, 0.0)

    samples = []
    for index, label in enumerate(labels):
        upper = np.triu(np.abs(rng.normal(0.0, 1.0, size=(n_nodes, n_nodes))), k=1)
        adjacency = signal_strength * int(label) * mask + noise * (upper + upper.T)
        samples.append(GraphSample(adjacency=adjacency, label=int(label), subject_id=f"synth-{index:04d}"))

    dataset = Dataset(name="synthetic-planted", samples=samples, node_count=n_nodes)
    logger.info(f"🧪 Generated {s_samples} planted samples, N={n_nodes}, planted={sorted(planted)}")
    return dataset, planted


def write_connectomes(dataset: Dataset, matrix_file, labels_file) -> None:
    """Write a dataset in the connectome text format at full precision"""
    rows = np.array([sample.adjacency.ravel() for sample in dataset.samples])
    np.savetxt(matrix_file, rows, delimiter=",", fmt="%.17g")
    np.savetxt(labels_file, np.array(dataset.labels), fmt="%d")
    logger.info(f"💾 Wrote {dataset.size} samples to {matrix_file} and {labels_file}")


def partition_hospitals(dataset: Dataset, h_count: int, seed: int) -> HospitalPartition:
    """
    Stratified shuffle-then-deal split into h_count hospitals with 3 stratified folds each.

    Each class is shuffled and dealt round-robin, continuing the deal across
    classes so hospital sizes differ by at most one. Hospitals keep source order;
    their folds come from a shuffled StratifiedKFold seeded off the same stream.
    """
    if h_count < 1:
        raise ParameterError(f"hospital count must be at least 1, got {h_count}")
    minimum = h_count * FOLD_COUNT
    counts = dataset.class_counts()
    if min(counts) < minimum:
        raise PartitionError(
            f"{dataset.name}: each class needs at least {minimum} samples for {h_count} hospitals "
            f"x {FOLD_COUNT} folds, got {counts[0]} / {counts[1]}"
        )

    rng = np.random.default_rng(seed)
    dealt: List[List[int]] = [[] for _ in range(h_count)]
    position = 0
    for label in (0, 1):
        members = [index for index, sample in enumerate(dataset.samples) if sample.label == label]
        for index in rng.permutation(members):
            dealt[position % h_count].append(int(index))
            position += 1

    hospitals, folds = [], []
    for hospital, members in enumerate(dealt):
        ordered = sorted(members)
        labels = np.array([dataset.samples[index].label for index in ordered])
        splitter = StratifiedKFold(n_splits=FOLD_COUNT, shuffle=True, random_state=int(rng.integers(2**32)))
        fold_of = np.empty(len(ordered), dtype=int)
        for fold, (_, held_out) in enumerate(splitter.split(np.zeros((len(ordered), 1)), labels)):
            fold_of[held_out] = fold
        hospitals.append(
            Dataset(
                name=f"{dataset.name}-hospital{hospital}",
                samples=[dataset.samples[index] for index in ordered],
                node_count=dataset.node_count,
            )
        )
        folds.append(fold_of.tolist())

    logger.info(f"🏥 Partitioned {dataset.size} samples into {h_count} hospitals: {[len(m) for m in dealt]}")
    return HospitalPartition(hospitals=hospitals, folds=folds)


def load_dataset(source: DatasetSource) -> Tuple[Dataset, FrozenSet[int]]:
    """Dataset for an experiment source; the planted set is empty for real data"""
    if source.kind == DatasetKind.CONNECTOME:
        return load_connectomes(source.matrix_file, source.labels_file), frozenset()
    if source.kind == DatasetKind.IMAGE:
        dataset = load_images(
            source.image_file,
            source.labels_file,
            side=source.side,
            downsample=source.downsample,
            representation=source.representation,
        )
        return dataset, frozenset()
    spec = source.synthetic
    return synth_planted(
        spec.n_nodes, spec.samples, spec.planted_nodes, spec.signal_strength, spec.noise, spec.seed
    )
