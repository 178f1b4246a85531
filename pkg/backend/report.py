"""
Report assets for a run: delimited tables (pandas, full float precision) and
hand-built SVG heatmaps / bar charts. Every asset is a deterministic function
of the RunResult.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from models import (
    AccuracyOverview,
    AccuracySummary,
    Biomarker,
    ModeResult,
    ReproducibilityMatrix,
    RunResult,
)
from store import atomic_write_text

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

# viridis anchor colors, low -> high
PALETTE = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)]
CELL = 72
MARGIN = 120
FONT = "font-family=\"Helvetica, Arial, sans-serif\""


def _color(value: float) -> Tuple[int, int, int]:
    position = min(max(value, 0.0), 1.0) * (len(PALETTE) - 1)
    index = min(int(position), len(PALETTE) - 2)
    t = position - index
    low, high = PALETTE[index], PALETTE[index + 1]
    return tuple(int(round(a + (b - a) * t)) for a, b in zip(low, high))


def _hex(rgb: Tuple[int, int, int]) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _text_color(rgb: Tuple[int, int, int]) -> str:
    luminance = (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]) / 255.0
    return "#000000" if luminance > 0.5 else "#ffffff"


def heatmap_svg(matrix: ReproducibilityMatrix, title: Optional[str] = None) -> str:
    size = len(matrix.models)
    top = MARGIN + (30 if title else 0)
    width = MARGIN + CELL * size + 20
    height = top + CELL * size + 20
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        lines.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16" {FONT}>{escape(title)}</text>')
    for j, name in enumerate(matrix.models):
        x = MARGIN + CELL * j + CELL / 2
        lines.append(f'<text x="{x:.1f}" y="{top - 10}" text-anchor="middle" font-size="13" {FONT}>{escape(name)}</text>')
    for i, name in enumerate(matrix.models):
        y = top + CELL * i + CELL / 2
        lines.append(
            f'<text x="{MARGIN - 10}" y="{y:.1f}" text-anchor="end" dominant-baseline="middle" font-size="13" {FONT}>{escape(name)}</text>'
        )
        for j in range(size):
            value = matrix.values[i][j]
            rgb = _color(value)
            x = MARGIN + CELL * j
            lines.append(
                f'<rect x="{x}" y="{top + CELL * i}" width="{CELL}" height="{CELL}" fill="{_hex(rgb)}" stroke="#ffffff"/>'
            )
            lines.append(
                f'<text x="{x + CELL / 2:.1f}" y="{y:.1f}" text-anchor="middle" dominant-baseline="middle" '
                f'font-size="14" fill="{_text_color(rgb)}" {FONT}>{value:.3f}</text>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_heatmap(matrix: ReproducibilityMatrix, path, title: Optional[str] = None) -> Path:
    """M x M colored grid with 3-decimal cell labels and model names"""
    return atomic_write_text(path, heatmap_svg(matrix, title))


def render_biomarker_bars(biomarkers: Sequence[Biomarker], path, title: Optional[str] = None) -> Path:
    """Horizontal bars of the ranked biomarker weights"""
    bar_height, label_width, bar_width = 22, 90, 360
    top = 40 if title else 10
    width = label_width + bar_width + 100
    height = top + bar_height * len(biomarkers) + 10
    largest = max((marker.weight for marker in biomarkers), default=0.0) or 1.0
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        lines.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16" {FONT}>{escape(title)}</text>')
    for row, marker in enumerate(biomarkers):
        y = top + bar_height * row
        length = bar_width * marker.weight / largest
        lines.append(
            f'<text x="{label_width - 8}" y="{y + bar_height / 2:.1f}" text-anchor="end" dominant-baseline="middle" '
            f'font-size="12" {FONT}>node {marker.node}</text>'
        )
        lines.append(
            f'<rect x="{label_width}" y="{y + 3}" width="{length:.2f}" height="{bar_height - 6}" '
            f'fill="{_hex(_color(marker.weight / largest))}"/>'
        )
        lines.append(
            f'<text x="{label_width + length + 6:.2f}" y="{y + bar_height / 2:.1f}" dominant-baseline="middle" '
            f'font-size="11" {FONT}>{marker.weight:.4f}</text>'
        )
    lines.append("</svg>")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def summarize_accuracies(result: RunResult) -> AccuracyOverview:
    """Mean and range of held-out accuracy per mode and model over folds, hospitals and repeats"""
    summaries = []
    for mode_result in result.modes:
        for model in result.config.models:
            values = [r.accuracy for r in mode_result.accuracies if r.model == model]
            if not values:
                continue
            summaries.append(
                AccuracySummary(
                    mode=mode_result.mode,
                    model=model,
                    mean=float(np.mean(values)),
                    minimum=min(values),
                    maximum=max(values),
                    count=len(values),
                )
            )
    return AccuracyOverview(
        run_id=result.run_id,
        summaries=summaries,
        selected_models={m.mode.value: m.selected_model for m in result.modes},
    )


def _write_frame(frame: pd.DataFrame, path, index: bool = False) -> Path:
    return atomic_write_text(path, frame.to_csv(index=index, float_format=FLOAT_FORMAT, lineterminator="\n"))


def _matrix_frame(matrix: ReproducibilityMatrix) -> pd.DataFrame:
    frame = pd.DataFrame(matrix.values, index=matrix.models, columns=matrix.models)
    frame.index.name = "model"
    return frame


def read_matrix_table(path) -> Tuple[List[str], np.ndarray]:
    """Parse an exported matrix table back into model names and values"""
    frame = pd.read_csv(path, index_col=0, float_precision="round_trip")
    return [str(name) for name in frame.index], frame.to_numpy(dtype=np.float64)


def _mode_tables(mode_result: ModeResult, directory: Path) -> List[Path]:
    written = [_write_frame(_matrix_frame(mode_result.average_matrix), directory / "average_matrix.csv", index=True)]
    for hospital, matrix in enumerate(mode_result.hospital_matrices):
        written.append(_write_frame(_matrix_frame(matrix), directory / f"hospital{hospital}_matrix.csv", index=True))

    strengths = mode_result.strengths
    written.append(
        _write_frame(
            pd.DataFrame(
                {
                    "model": strengths.models,
                    "strength": strengths.scores,
                    "selected": [name == mode_result.selected_model.value for name in strengths.models],
                }
            ),
            directory / "strengths.csv",
        )
    )
    written.append(
        _write_frame(
            pd.DataFrame([b.model_dump() for b in mode_result.biomarkers], columns=["rank", "node", "weight"]),
            directory / "biomarkers.csv",
        )
    )
    written.append(
        _write_frame(
            pd.DataFrame(
                [
                    {"hospital": hospital, **marker.model_dump()}
                    for hospital, markers in enumerate(mode_result.hospital_biomarkers)
                    for marker in markers
                ],
                columns=["hospital", "rank", "node", "weight"],
            ),
            directory / "hospital_biomarkers.csv",
        )
    )
    written.append(
        _write_frame(
            pd.DataFrame(
                [
                    {"model": vector.model_kind.value, "hospital": vector.hospital_id, "node": node, "weight": weight}
                    for vector in mode_result.node_weights
                    for node, weight in enumerate(vector.weights)
                ],
                columns=["model", "hospital", "node", "weight"],
            ),
            directory / "node_weights.csv",
        )
    )
    if mode_result.round_summaries:
        rows = [
            {
                "model": summary.model.value,
                "repeat": summary.repeat,
                "fold": summary.fold,
                "round": summary.round,
                "hospital": hospital,
                "train_loss": loss,
                "validation_accuracy": accuracy,
                "max_mean_deviation": summary.max_mean_deviation,
            }
            for summary in mode_result.round_summaries
            for hospital, (loss, accuracy) in enumerate(zip(summary.train_losses, summary.validation_accuracies))
        ]
        written.append(_write_frame(pd.DataFrame(rows), directory / "rounds.csv"))
    return written


def export_tables(result: RunResult, directory) -> List[Path]:
    """Accuracy, matrix, strength and biomarker tables for every mode of a run"""
    directory = Path(directory)
    accuracies = pd.DataFrame(
        [record.model_dump(mode="json") for mode in result.modes for record in mode.accuracies],
        columns=["mode", "model", "repeat", "fold", "hospital", "accuracy"],
    ).sort_values(["mode", "model", "repeat", "fold", "hospital"], kind="stable")
    written = [_write_frame(accuracies, directory / "accuracies.csv")]

    overview = summarize_accuracies(result)
    written.append(
        _write_frame(
            pd.DataFrame(
                [summary.model_dump(mode="json") for summary in overview.summaries],
                columns=["mode", "model", "mean", "minimum", "maximum", "count"],
            ),
            directory / "accuracy_summary.csv",
        )
    )
    for mode_result in result.modes:
        written.extend(_mode_tables(mode_result, directory / mode_result.mode.value))
    logger.info(f"📋 Exported {len(written)} tables to {directory}")
    return written


def write_report(result: RunResult, out_dir) -> List[Path]:
    """Tables plus SVG heatmaps and biomarker charts for every mode"""
    out_dir = Path(out_dir)
    written = export_tables(result, out_dir / "tables")
    figures = out_dir / "figures"
    for mode_result in result.modes:
        mode = mode_result.mode.value
        written.append(
            render_heatmap(mode_result.average_matrix, figures / f"{mode}_average.svg", title=f"{mode} average reproducibility")
        )
        for hospital, matrix in enumerate(mode_result.hospital_matrices):
            written.append(
                render_heatmap(matrix, figures / f"{mode}_hospital{hospital}.svg", title=f"{mode} hospital {hospital}")
            )
        written.append(
            render_biomarker_bars(
                mode_result.biomarkers,
                figures / f"{mode}_biomarkers.svg",
                title=f"{mode} biomarkers ({mode_result.selected_model.value})",
            )
        )
    logger.info(f"✅ Report for {result.run_id} written to {out_dir}")
    return written
