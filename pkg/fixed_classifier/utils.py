"""
Utilities Module

Result writers and console summaries for the experiment runner: CSV tables
(17 significant digits, so every value re-parses exactly), the binary PGM
heatmap of class-vector cosines, and a plain-text report.
"""

import csv
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import DimensionError
from .metrics import ClassPair, MetricsReport


def format_value(value: Any) -> str:
    """CSV cell text; floats keep 17 significant digits, None becomes empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    return str(value)


def format_metric(value: Optional[float], spec: str = ".4f") -> str:
    """Console text for a statistic that may be undefined."""
    return "n/a" if value is None else format(value, spec)


def write_csv(filename: Union[str, Path], header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    with open(filename, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return Path(filename)


def save_metrics_to_csv(report: MetricsReport, filename: Union[str, Path]) -> Path:
    """One (metric, value) row per scalar figure of the report."""
    return write_csv(filename, ['metric', 'value'], list(report.summary().items()))


def save_matrix_to_csv(matrix: np.ndarray, filename: Union[str, Path]) -> Path:
    """Square class-by-class matrix with a class-index header row and column."""
    matrix = np.asarray(matrix)
    m = matrix.shape[0]
    rows = [[i] + list(matrix[i]) for i in range(m)]
    return write_csv(filename, ['class'] + [str(j) for j in range(matrix.shape[1])], rows)


def save_pairs_to_csv(pairs: Sequence[ClassPair], filename: Union[str, Path]) -> Path:
    """Similarity-versus-confusion scatter data."""
    rows = [[p.true_class, p.predicted_class, p.cosine, p.confusions] for p in pairs]
    return write_csv(filename, ['true_class', 'predicted_class', 'cosine', 'confusions'], rows)


def save_projection_to_csv(projection: Optional[np.ndarray],
                           labels: Sequence[int],
                           filename: Union[str, Path]) -> Path:
    rows = []
    if projection is not None:
        rows = [[i, int(label), x, y] for i, (label, (x, y)) in enumerate(zip(labels, projection))]
    return write_csv(filename, ['index', 'label', 'x', 'y'], rows)


def save_table_to_csv(table: Sequence[Dict[str, Any]], filename: Union[str, Path]) -> Path:
    """List of homogeneous dicts (sweep, comparison, corruption tables)."""
    header = list(table[0].keys()) if table else []
    return write_csv(filename, header, [[row[key] for key in header] for row in table])


def emit_heatmap(matrix: np.ndarray, path: Union[str, Path]) -> Path:
    """
    Write an m x m matrix with values in [-1, 1] as a binary PGM image.

    Pixel value = floor(255 * (v + 1) / 2 + 0.5), so cosine 0 maps to 128.

    Raises:
        DimensionError: If the matrix is not square
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"heatmap needs a square matrix, got shape {matrix.shape}")
    m = matrix.shape[0]
    pixels = np.floor(255.0 * (np.clip(matrix, -1.0, 1.0) + 1.0) / 2.0 + 0.5).astype(np.uint8)
    with open(path, 'wb') as f:
        f.write(f"P5\n{m} {m}\n255\n".encode('ascii'))
        f.write(pixels.tobytes())
    return Path(path)


def print_run_summary(summary: Dict[str, Any], title: str = "RUN"):
    """
    Print a formatted summary of one evaluation.

    Args:
        summary: Scalar figures (MetricsReport.summary() or an average of several)
        title: Banner title
    """
    print("\n" + "=" * 60)
    print(f"FIXED CLASSIFIER RESULTS - {title.upper()}")
    print("=" * 60)
    print(f"\nTest accuracy:                {format_metric(summary.get('accuracy'))}")
    print(f"Mean predicted-class cosine:  {format_metric(summary.get('mean_pred_cosine'))}")
    print(f"Intra-class compactness:      {format_metric(summary.get('compactness'))}")
    print(f"Inter-class separability:     {format_metric(summary.get('separability'))}")
    print(f"Similarity/confusion rho:     {format_metric(summary.get('spearman_rho'))}")
    print(f"Mean class-vector cosine:     {format_metric(summary.get('mean_class_cosine'))}")
    print("\n" + "=" * 60 + "\n")


def print_comparison(rows: List[Dict[str, Any]]):
    """Side-by-side table of two variants; '*' marks the winner of each column."""
    print("\n" + "=" * 60)
    print("FIXED CLASSIFIER COMPARISON")
    print("=" * 60)
    print(f"\n{'variant':<18}{'accuracy':>11}{'compact':>11}{'separab':>11}{'rho':>9}")
    for row in rows:
        cells = []
        for key, width in (('accuracy', 11), ('compactness', 11), ('separability', 11), ('spearman_rho', 9)):
            mark = "*" if row.get(f'{key}_winner') else " "
            cells.append(f"{format_metric(row[key]) + mark:>{width}}")
        print(f"{row['variant']:<18}" + "".join(cells))
    print("\n" + "=" * 60 + "\n")


def print_sweep(axis: str, table: List[Dict[str, Any]], best_value: float):
    print("\n" + "=" * 60)
    print(f"FIXED CLASSIFIER SWEEP - {axis.upper()}")
    print("=" * 60)
    print(f"\n{axis:>14}{'accuracy':>11}{'pred_cos':>11}{'class_cos':>11}")
    for row in table:
        mark = "  <- best" if row[axis] == best_value else ""
        print(f"{row[axis]:>14g}{format_metric(row['test_accuracy']):>11}"
              f"{format_metric(row['mean_pred_cosine']):>11}{format_metric(row['mean_class_cosine']):>11}{mark}")
    print("\n" + "=" * 60 + "\n")


class ExperimentReport:
    """
    Plain-text report of an experiment run.
    """

    def __init__(self, title: str):
        self.title = title
        self.results: Dict[str, Any] = {}

    def add_results(self, key: str, value: Any):
        """Add results to the report."""
        self.results[key] = value

    def generate_text_report(self) -> str:
        report_lines = []
        report_lines.append("=" * 70)
        report_lines.append(f"FIXED CLASSIFIER EXPERIMENT REPORT - {self.title.upper()}")
        report_lines.append("=" * 70)
        report_lines.append("")

        for key, value in self.results.items():
            if isinstance(value, dict):
                report_lines.append(f"{key}:")
                for sub_key, sub_value in value.items():
                    report_lines.append(f"  {sub_key}: {_report_value(sub_value)}")
            else:
                report_lines.append(f"{key}: {_report_value(value)}")

        report_lines.append("")
        report_lines.append("=" * 70)
        return "\n".join(report_lines)

    def save_report(self, filename: Union[str, Path]):
        """Save report to file."""
        with open(filename, 'w', encoding='utf-8') as f:
            f.write(self.generate_text_report() + "\n")


def _report_value(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float) and math.isfinite(value):
        return f"{value:.6g}"
    return str(value)
