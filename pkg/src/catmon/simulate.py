"""Scenario definitions and the table runner for run-length studies.

A scenario is a stream population (templates with multiplicities), a list of
shift assignments (table rows), and the chart/calibration settings.  The
runner calibrates one control limit per fusion statistic on the in-control
population and then estimates the out-of-control ARL of every row.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._engine import DEFAULT_CAP, DEFAULT_WARMUP
from .calibration import CalibrationResult, RunLengthSummary, calibrate_limits, estimate_arl
from .global_monitor import STATISTICS, ChartConfig
from .streams import (
    NominalShift,
    NominalSpec,
    NoShift,
    OrdinalShift,
    OrdinalSpec,
    ShiftSpec,
    StreamSpec,
    sampling_probs,
)

__all__ = [
    "ShiftAssignment",
    "Scenario",
    "ResultTable",
    "build_population",
    "run_table",
    "export_table",
    "parse_table_csv",
    "load_scenario",
    "bundled_scenarios",
]

IC_LABEL = "IC"

# Branch code for OC-cell seed derivation (0..2 are used by calibration).
_BRANCH_CELL = 3


@dataclass(frozen=True)
class ShiftAssignment:
    """One table row: how many streams of which population case shift, and how.

    ``entries`` holds ``(case_index, shifted_count, shift)`` triples; cases
    not mentioned stay in control.
    """

    label: str
    entries: tuple[tuple[int, int, ShiftSpec], ...] = ()


@dataclass
class Scenario:
    """A full simulation case: population, shift grid, chart settings."""

    name: str
    population: list[tuple[StreamSpec, int]]
    rows: list[ShiftAssignment]
    lam: float
    n_per_sample: int
    statistics: tuple[str, ...]
    target_arl0: float
    reps: int
    master_seed: int
    cap: int = DEFAULT_CAP
    warmup: int = DEFAULT_WARMUP

    def __post_init__(self):
        if not self.population:
            raise ValueError("population is empty")
        for statistic in self.statistics:
            if statistic not in STATISTICS:
                raise ValueError(f"unknown statistic {statistic!r}")
        for row in self.rows:
            for case_index, count, shift in row.entries:
                if not 0 <= case_index < len(self.population):
                    raise ValueError(
                        f"row {row.label!r} references case {case_index}, "
                        f"population has {len(self.population)}"
                    )
                spec, available = self.population[case_index]
                if count > available:
                    raise ValueError(
                        f"row {row.label!r} shifts {count} streams of case "
                        f"{case_index} but only {available} exist"
                    )
                sampling_probs(spec, shift)  # raises if the shift is invalid

    @property
    def p(self) -> int:
        return sum(count for _, count in self.population)


def build_population(scenario: Scenario,
                     assignment: Optional[ShiftAssignment] = None
                     ) -> tuple[list[StreamSpec], list[ShiftSpec]]:
    """Expand the population templates into per-stream specs and shifts.

    Within each case the first ``shifted_count`` streams get the shift;
    streams of a case are exchangeable, so which ones shift is immaterial,
    and putting them first keeps the expansion deterministic.
    """
    shifted_by_case: dict[int, tuple[int, ShiftSpec]] = {}
    if assignment is not None:
        for case_index, count, shift in assignment.entries:
            if case_index in shifted_by_case:
                raise ValueError(
                    f"row {assignment.label!r} lists case {case_index} twice"
                )
            shifted_by_case[case_index] = (count, shift)
    specs: list[StreamSpec] = []
    shifts: list[ShiftSpec] = []
    for case_index, (spec, count) in enumerate(scenario.population):
        n_shift, shift = shifted_by_case.get(case_index, (0, NoShift()))
        if n_shift > count:
            raise ValueError(
                f"cannot shift {n_shift} of {count} streams in case {case_index}"
            )
        specs.extend([spec] * count)
        shifts.extend([shift] * n_shift)
        shifts.extend([NoShift()] * (count - n_shift))
    return specs, shifts


@dataclass
class ResultTable:
    """Calibrated limits plus one run-length summary per (row, statistic)."""

    scenario_name: str
    statistics: tuple[str, ...]
    limits: dict[str, CalibrationResult]
    row_labels: list[str]
    cells: dict[tuple[str, str], RunLengthSummary] = field(default_factory=dict)


def run_table(scenario: Scenario, reps: Optional[int] = None,
              tol_rel: float = 0.02, workers: Optional[int] = None,
              confirm_reps: Optional[int] = None) -> ResultTable:
    """Calibrate once per statistic, then fill every (row, statistic) cell.

    The in-control row labeled ``IC`` reports the calibration confirmations.
    """
    reps = scenario.reps if reps is None else reps
    ic_specs, ic_shifts = build_population(scenario)
    config = ChartConfig(scenario.lam, scenario.n_per_sample)
    limits = calibrate_limits(
        ic_specs, config, scenario.statistics, scenario.target_arl0, reps,
        tol_rel=tol_rel, master_seed=scenario.master_seed, cap=scenario.cap,
        warmup=scenario.warmup, workers=workers, confirm_reps=confirm_reps)
    table = ResultTable(
        scenario_name=scenario.name,
        statistics=tuple(scenario.statistics),
        limits=limits,
        row_labels=[IC_LABEL] + [row.label for row in scenario.rows],
    )
    for statistic in scenario.statistics:
        table.cells[(IC_LABEL, statistic)] = limits[statistic].confirmation
    for row_index, row in enumerate(scenario.rows):
        specs, shifts = build_population(scenario, row)
        for stat_index, statistic in enumerate(scenario.statistics):
            cell_config = ChartConfig(scenario.lam, scenario.n_per_sample,
                                      statistic, limits[statistic].limit)
            table.cells[(row.label, statistic)] = estimate_arl(
                specs, shifts, cell_config, reps, scenario.master_seed,
                cap=scenario.cap, warmup=scenario.warmup, workers=workers,
                branch=(_BRANCH_CELL, row_index, stat_index))
    return table


def export_table(table: ResultTable, fmt: str = "csv") -> str:
    """Render a result table.

    ``csv`` is the machine-readable form (17 significant digits, one row per
    cell); ``text`` is the human-readable grid with standard errors in
    parentheses.
    """
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", "row", "statistic", "limit", "arl", "se",
                         "reps", "capped_fraction", "cap"])
        for label in table.row_labels:
            for statistic in table.statistics:
                cell = table.cells[(label, statistic)]
                writer.writerow([
                    table.scenario_name, label, statistic,
                    _fmt17(table.limits[statistic].limit),
                    _fmt17(cell.arl), _fmt17(cell.se),
                    cell.reps, _fmt17(cell.capped_fraction), cell.cap,
                ])
        return buf.getvalue()
    if fmt == "text":
        width = 18
        lines = [f"scenario: {table.scenario_name}"]
        lines.append("limits:   " + "  ".join(
            f"{s}={table.limits[s].limit:.6g}" for s in table.statistics))
        header = f"{'row':>12s}" + "".join(f"{s:>{width}s}" for s in table.statistics)
        lines.append(header)
        for label in table.row_labels:
            cellstr = []
            for statistic in table.statistics:
                cell = table.cells[(label, statistic)]
                cellstr.append(f"{_fmt3(cell.arl)} ({_fmt3(cell.se)})".rjust(width))
            lines.append(f"{label:>12s}" + "".join(cellstr))
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'text'")


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def _fmt3(x: float) -> str:
    """Three significant digits, the resolution used in run-length tables."""
    if x == 0.0:
        return "0.00"
    digits = max(0, 2 - int(math.floor(math.log10(abs(x)))))
    return f"{x:.{digits}f}"


def parse_table_csv(text: str) -> dict[tuple[str, str], dict]:
    """Parse ``export_table(..., 'csv')`` output back into cell records."""
    reader = csv.DictReader(io.StringIO(text))
    cells = {}
    for rec in reader:
        cells[(rec["row"], rec["statistic"])] = {
            "limit": float(rec["limit"]),
            "arl": float(rec["arl"]),
            "se": float(rec["se"]),
            "reps": int(rec["reps"]),
            "capped_fraction": float(rec["capped_fraction"]),
            "cap": int(rec["cap"]),
        }
    return cells


# ---------------------------------------------------------------------------
# scenario files


def _spec_from_json(obj: dict) -> StreamSpec:
    kind = obj.get("kind")
    if kind == "nominal":
        return NominalSpec(np.asarray(obj["probs"], dtype=float))
    if kind == "ordinal":
        latent = obj.get("latent", "normal")
        if "cutpoints" in obj:
            return OrdinalSpec.from_cutpoints(obj["cutpoints"], latent)
        return OrdinalSpec.from_probs(obj["probs"], latent)
    raise ValueError(f"unknown stream kind {kind!r}")


def _shift_from_json(obj: dict) -> ShiftSpec:
    if "xi" in obj:
        return NominalShift(np.asarray(obj["xi"], dtype=float))
    if "delta" in obj:
        return OrdinalShift(float(obj["delta"]))
    return NoShift()


_SCENARIO_KEYS = {
    "schema_version", "name", "lambda", "sample_size", "statistics",
    "target_arl0", "reps", "seed", "cap", "warmup", "population", "rows",
}


def scenario_from_json(obj: dict) -> Scenario:
    unknown = set(obj) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    if obj.get("schema_version") != 1:
        raise ValueError("scenario file must declare schema_version 1")
    population = [(_spec_from_json(c), int(c["count"])) for c in obj["population"]]
    rows = []
    for row in obj.get("rows", []):
        entries = tuple(
            (int(e["case"]), int(e["count"]), _shift_from_json(e))
            for e in row.get("shifts", [])
        )
        rows.append(ShiftAssignment(label=str(row["label"]), entries=entries))
    return Scenario(
        name=str(obj.get("name", "scenario")),
        population=population,
        rows=rows,
        lam=float(obj["lambda"]),
        n_per_sample=int(obj["sample_size"]),
        statistics=tuple(obj.get("statistics", ["zhang"])),
        target_arl0=float(obj["target_arl0"]),
        reps=int(obj.get("reps", 2000)),
        master_seed=int(obj.get("seed", 0)),
        cap=int(obj.get("cap", DEFAULT_CAP)),
        warmup=int(obj.get("warmup", DEFAULT_WARMUP)),
    )


def bundled_scenarios() -> list[str]:
    """Names of the scenario files shipped with the package."""
    root = resources.files("catmon") / "scenarios"
    return sorted(p.name.removesuffix(".json") for p in root.iterdir()
                  if p.name.endswith(".json"))


def load_scenario(name_or_path) -> Scenario:
    """Load a scenario from a path, or by bundled name (e.g. ``table1_xi003``)."""
    path = Path(name_or_path)
    if path.exists():
        text = path.read_text()
    else:
        candidate = resources.files("catmon") / "scenarios" / f"{name_or_path}.json"
        if not candidate.is_file():
            raise FileNotFoundError(
                f"no scenario file {name_or_path!r}; bundled: {bundled_scenarios()}"
            )
        text = candidate.read_text()
    return scenario_from_json(json.loads(text))
