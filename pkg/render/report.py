"""
render/report.py
Plain-text renderings: key=value run reports, the benchmark table and
transforms.
"""

from typing import Mapping

import numpy as np

from core.diagnostics import BenchmarkTable
from core.geometry import RigidTransform
from core.pipeline import RunReport


def _fmt(value: object) -> str:
    if value is None:
        return "none"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def format_key_values(values: Mapping[str, object]) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def format_report(report: RunReport) -> str:
    return format_key_values(report.as_dict())


def format_transform(t: RigidTransform) -> str:
    """4×4 homogeneous matrix, one row per line."""
    return "".join(" ".join(f"{v: .9f}" for v in row) + "\n" for row in t.as_matrix())


def format_benchmark(table: BenchmarkTable) -> str:
    """Stage rows by scenario columns, each cell "mean ± std" in seconds."""
    header = ["stage"] + table.scenarios
    body = [[row] + [str(table.cell(row, s)) if table.cell(row, s) else "n/a" for s in table.scenarios]
            for row in table.rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def line(cells: list[str]) -> str:
        return " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip() + "\n"

    rule = "-+-".join("-" * w for w in widths) + "\n"
    title = f"Average stage time over {table.repetitions} runs (s)\n"
    return title + line(header) + rule + "".join(line(r) for r in body)
