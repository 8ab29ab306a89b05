"""
core/diagnostics.py
Stage timing benchmark: repeated pipeline runs per scenario, summarized
as mean ± sample standard deviation for the coarse (FPFH), ICP and
D* Lite stages, one column per scenario.
"""

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from config.settings import PipelineConfig, log
from core.geometry import PointCloud
from core.pipeline import run_pipeline

ROWS = {"FPFH": "coarse", "ICP": "icp", "D* Lite": "plan"}
GATING_ROWS = {True: "ICP (gated)", False: "ICP (ungated)"}


@dataclass(frozen=True)
class StageStats:
    mean: float
    std: float
    samples: int

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def summarize(samples: Sequence[float]) -> Optional[StageStats]:
    if not samples:
        return None
    values = np.asarray(samples, dtype=np.float64)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return StageStats(float(values.mean()), std, len(values))


@dataclass
class BenchmarkTable:
    scenarios: list[str]
    repetitions: int
    rows: list[str] = field(default_factory=lambda: list(ROWS))
    cells: dict[str, dict[str, Optional[StageStats]]] = field(default_factory=dict)

    def cell(self, row: str, scenario: str) -> Optional[StageStats]:
        return self.cells.get(row, {}).get(scenario)


def benchmark(config: PipelineConfig,
              scans: Union[Sequence[PointCloud], Mapping[str, Sequence[PointCloud]]],
              repetitions: int = 5, compare_gating: bool = False) -> BenchmarkTable:
    """Time `repetitions` full pipeline runs per scenario.

    `scans` is either one scan list or a mapping of scenario name to scan
    list. With `compare_gating`, each repetition also runs ICP with the
    opposite gating setting and reports it in an extra row.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    scenarios = dict(scans) if isinstance(scans, Mapping) else {"scans": list(scans)}

    table = BenchmarkTable(list(scenarios), repetitions)
    other_config = replace(config, surface_gating=not config.surface_gating)
    other_row = GATING_ROWS[other_config.surface_gating]
    if compare_gating:
        table.rows.append(other_row)
    table.cells = {row: {} for row in table.rows}

    for name, clouds in scenarios.items():
        samples: dict[str, list[float]] = {row: [] for row in table.rows}
        for rep in range(repetitions):
            _, _, report = run_pipeline(config, clouds)
            for row, stage in ROWS.items():
                secs = report.seconds(stage)
                if secs is not None:
                    samples[row].append(secs)
            if compare_gating:
                _, _, other = run_pipeline(other_config, clouds)
                if other.seconds("icp") is not None:
                    samples[other_row].append(other.seconds("icp"))
            log.info(f"[Bench] {name} run {rep + 1}/{repetitions}: " +
                     ", ".join(f"{row}={vals[-1]:.3f}s" for row, vals in samples.items() if vals))
        for row in table.rows:
            table.cells[row][name] = summarize(samples[row])
    return table
