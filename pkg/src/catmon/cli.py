"""Command-line surface.

Commands:

* ``discretize`` - Phase I: impute, threshold, and dichotomize continuous
  history into categorical observations plus estimated IC probabilities.
* ``calibrate``  - find the control limit for a target in-control ARL.
* ``monitor``    - Phase II: run the chart over an observation file.
* ``simulate``   - run a scenario file and write its result table.
* ``scores``     - print the derived score vectors of ordinal streams.

Structured outputs are line-delimited with a header row; numeric fields are
serialized with 17 significant digits so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .calibration import calibrate_limit
from .global_monitor import STATISTICS, ChartConfig, chart_step
from .local_monitor import init_state
from .simulate import export_table, load_scenario, run_table
from .streams import NominalSpec, OrdinalSpec, StreamSpec

__all__ = ["main", "ConfigError"]


class ConfigError(ValueError):
    """A config or data file does not match its documented schema."""


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# monitor config files

_CONFIG_KEYS = {"schema_version", "lambda", "sample_size", "statistic",
                "limit", "seed", "streams"}
_STREAM_KEYS = {"id", "kind", "probs", "cutpoints", "latent"}


def load_config(path) -> tuple[list[StreamSpec], ChartConfig, int]:
    """Parse a monitor config file into stream specs plus chart settings.

    Unknown keys are rejected rather than ignored: a silently misread
    smoothing parameter or sample size would invalidate the whole chart.
    """
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(obj) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if obj.get("schema_version") != 1:
        raise ConfigError(f"{path}: schema_version must be 1")
    for key in ("lambda", "sample_size", "streams"):
        if key not in obj:
            raise ConfigError(f"{path}: missing required key {key!r}")
    specs: list[StreamSpec] = []
    for pos, sobj in enumerate(obj["streams"], start=1):
        unknown = set(sobj) - _STREAM_KEYS
        if unknown:
            raise ConfigError(f"{path}: stream {pos}: unknown keys {sorted(unknown)}")
        if "id" in sobj and int(sobj["id"]) != pos:
            raise ConfigError(
                f"{path}: stream ids must be 1..p in order; "
                f"position {pos} has id {sobj['id']}"
            )
        kind = sobj.get("kind")
        try:
            if kind == "nominal":
                specs.append(NominalSpec(np.asarray(sobj["probs"], dtype=float)))
            elif kind == "ordinal":
                latent = sobj.get("latent", "normal")
                if "cutpoints" in sobj:
                    specs.append(OrdinalSpec.from_cutpoints(sobj["cutpoints"], latent))
                else:
                    specs.append(OrdinalSpec.from_probs(sobj["probs"], latent))
            else:
                raise ConfigError(f"{path}: stream {pos}: unknown kind {kind!r}")
        except ValueError as exc:
            raise ConfigError(f"{path}: stream {pos}: {exc}") from exc
    if not specs:
        raise ConfigError(f"{path}: no streams defined")
    limit = obj.get("limit")
    config = ChartConfig(
        lam=float(obj["lambda"]),
        n_per_sample=int(obj["sample_size"]),
        statistic=obj.get("statistic", "zhang"),
        limit=None if limit is None else float(limit),
    )
    return specs, config, int(obj.get("seed", 0))


# ---------------------------------------------------------------------------
# observation files


def _split_row(line: str) -> list[str]:
    line = line.strip()
    if not line:
        return []
    return line.split(",") if "," in line else line.split()


def load_observations(path, specs: list[StreamSpec]) -> np.ndarray:
    """Read an observation matrix: one row per time, one column per stream.

    Entries are 1-based attribute levels; every level must lie within its
    stream's range.
    """
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.lstrip().startswith("#"):
                continue
            fields = _split_row(line)
            if not fields:
                continue
            if len(fields) != len(specs):
                raise ConfigError(
                    f"{path}:{lineno}: expected {len(specs)} columns, got {len(fields)}"
                )
            try:
                rows.append([int(f) for f in fields])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: non-integer level ({exc})") from exc
    data = np.asarray(rows, dtype=np.int64)
    if data.size == 0:
        raise ConfigError(f"{path}: no observations")
    for i, spec in enumerate(specs):
        col = data[:, i]
        if col.min() < 1 or col.max() > spec.h:
            raise ConfigError(
                f"{path}: stream {i + 1} has levels outside 1..{spec.h}"
            )
    return data


# ---------------------------------------------------------------------------
# commands


def cmd_monitor(args) -> int:
    specs, config, _ = load_config(args.config)
    if config.limit is None:
        raise ConfigError(f"{args.config}: monitoring needs a control limit "
                          "(run calibrate first)")
    data = load_observations(args.data, specs)
    n = config.n_per_sample
    n_samples = data.shape[0] // n
    if n_samples == 0:
        raise ConfigError(
            f"{args.data}: {data.shape[0]} rows cannot fill one sample of size {n}"
        )
    dropped = data.shape[0] - n_samples * n
    if dropped:
        print(f"warning: dropping trailing partial sample ({dropped} rows)",
              file=sys.stderr)

    states = [init_state(spec, n) for spec in specs]
    header = ["k", "value", "log_value", "limit", "alarm"]
    if args.emit_local_scores:
        header += [f"u_{i + 1}" for i in range(len(specs))]
    lines = [",".join(header)]
    for k in range(n_samples):
        block = data[k * n:(k + 1) * n]
        counts = [np.bincount(block[:, i], minlength=spec.h + 1)[1:]
                  for i, spec in enumerate(specs)]
        states, point = chart_step(states, specs, counts, config,
                                   keep_scores=args.emit_local_scores)
        log_value = math.log(point.value) if point.value > 0.0 else -math.inf
        rec = [str(point.k), _fmt17(point.value), _fmt17(log_value),
               _fmt17(config.limit), "1" if point.alarm else "0"]
        if args.emit_local_scores:
            rec += [_fmt17(u) for u in point.local_scores]
        lines.append(",".join(rec))
    Path(args.out).write_text("\n".join(lines) + "\n")
    alarms = sum(1 for ln in lines[1:] if ln.split(",")[4] == "1")
    print(f"monitored {n_samples} samples, {alarms} alarms -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    specs, config, seed = load_config(args.config)
    if args.seed is not None:
        seed = args.seed
    result = calibrate_limit(specs, config, target_arl0=args.arl0,
                             reps=args.reps, master_seed=seed,
                             workers=args.workers)
    record = {
        "schema_version": 1,
        "statistic": config.statistic,
        "target_arl0": args.arl0,
        "reps": args.reps,
        "seed": seed,
        "limit": result.limit,
        "achieved_arl": result.achieved_arl,
        "achieved_se": result.achieved_se,
        "iterations": result.iterations,
        "bracket": list(result.bracket),
        "capped_fraction": result.confirmation.capped_fraction,
    }
    Path(args.out).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
    print(f"{config.statistic}: limit {result.limit:.6g} achieves ARL "
          f"{result.achieved_arl:.1f} (se {result.achieved_se:.1f}) -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    reps = {"desk": 2000, "full": 10000}[args.preset]
    table = run_table(scenario, reps=reps, workers=args.workers)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{scenario.name}.csv").write_text(export_table(table, "csv"))
    (out_dir / f"{scenario.name}.txt").write_text(export_table(table, "text"))
    calib = {
        statistic: {
            "limit": res.limit,
            "achieved_arl": res.achieved_arl,
            "achieved_se": res.achieved_se,
            "iterations": res.iterations,
        }
        for statistic, res in table.limits.items()
    }
    (out_dir / f"{scenario.name}_calibration.json").write_text(
        json.dumps(calib, sort_keys=True, indent=2) + "\n")
    print(export_table(table, "text"))
    print(f"wrote {scenario.name}.csv / .txt / _calibration.json in {out_dir}")
    return 0


def cmd_scores(args) -> int:
    specs, _, _ = load_config(args.config)
    any_ordinal = False
    for i, spec in enumerate(specs, start=1):
        if not isinstance(spec, OrdinalSpec):
            continue
        any_ordinal = True
        centering = float(spec.pi0 @ spec.alpha)
        print(f"stream {i} (ordinal, {spec.h} levels, latent {spec.latent_family})")
        print(f"  cutpoints: {[round(c, 6) for c in spec.cutpoints]}")
        print(f"  alpha:     {[round(a, 6) for a in spec.alpha]}")
        print(f"  alpha'Lambda alpha: {spec.alpha_quad:.6f}")
        print(f"  sum pi*alpha:       {centering:.3e}")
    if not any_ordinal:
        print("no ordinal streams in this config")
    return 0


# ---------------------------------------------------------------------------
# Phase I discretization


def _load_numeric_matrix(path) -> np.ndarray:
    """Float matrix; empty fields, 'na', and 'nan' (any case) are missing."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.lstrip().startswith("#"):
                continue
            fields = _split_row(line)
            if not fields:
                continue
            row = []
            for f in fields:
                f = f.strip()
                if f == "" or f.lower() in ("na", "nan"):
                    row.append(np.nan)
                else:
                    try:
                        row.append(float(f))
                    except ValueError as exc:
                        raise ConfigError(f"{path}:{lineno}: bad number {f!r}") from exc
            rows.append(row)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.asarray(rows, dtype=float)


def cmd_discretize(args) -> int:
    data = _load_numeric_matrix(args.data)
    labels = [ln.strip() for ln in Path(args.labels).read_text().splitlines()
              if ln.strip()]
    if len(labels) != data.shape[0]:
        raise ConfigError(
            f"{args.labels}: {len(labels)} labels for {data.shape[0]} data rows"
        )
    labels = np.asarray(labels)
    conforming = labels == args.conforming
    if not conforming.any():
        raise ConfigError(f"no rows labeled {args.conforming!r} (conforming group)")

    # impute missing values by the (stream, group) mean of observed values
    filled = data.copy()
    for group in np.unique(labels):
        rows = labels == group
        block = filled[rows]
        for j in range(block.shape[1]):
            col = block[:, j]
            missing = np.isnan(col)
            if missing.all():
                raise ConfigError(
                    f"stream {j + 1} has no observed values in group {group!r}"
                )
            if missing.any():
                col[missing] = col[~missing].mean()
        filled[rows] = block

    conf = filled[conforming]
    thresholds = conf.mean(axis=0)
    constant = conf.max(axis=0) == conf.min(axis=0)
    kept = ~constant
    if not kept.any():
        raise ConfigError("every stream is constant in the conforming group")

    levels = np.where(filled <= thresholds, 1, 2)[:, kept]
    p1 = (conf[:, kept] <= thresholds[kept]).mean(axis=0)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["stream,source_column,status,threshold,p_level1,p_level2"]
    kept_idx = np.flatnonzero(kept)
    for rank, j in enumerate(kept_idx, start=1):
        lines.append(f"{rank},{j + 1},kept,{_fmt17(thresholds[j])},"
                     f"{_fmt17(p1[rank - 1])},{_fmt17(1.0 - p1[rank - 1])}")
    for j in np.flatnonzero(constant):
        lines.append(f",{j + 1},dropped-constant,{_fmt17(thresholds[j])},,")
    (out_dir / "thresholds.csv").write_text("\n".join(lines) + "\n")

    obs_lines = [" ".join(str(v) for v in row) for row in levels]
    (out_dir / "observations.csv").write_text("\n".join(obs_lines) + "\n")

    config = {
        "schema_version": 1,
        "lambda": 0.1,
        "sample_size": 4,
        "statistic": "zhang",
        "limit": None,
        "seed": 0,
        "streams": [
            {"id": rank, "kind": "nominal",
             "probs": [p1[rank - 1], 1.0 - p1[rank - 1]]}
            for rank in range(1, kept_idx.size + 1)
        ],
    }
    (out_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")

    print(f"kept {kept_idx.size} streams, dropped {int(constant.sum())} constant; "
          f"wrote thresholds.csv, observations.csv, config.json in {out_dir}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catmon",
        description="Monitor many heterogeneous categorical data streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="find a control limit for a target IC ARL")
    p.add_argument("--config", required=True)
    p.add_argument("--arl0", type=float, required=True)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("simulate", help="run a scenario and write its ARL table")
    p.add_argument("--scenario", required=True,
                   help="path to a scenario file or a bundled name")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("monitor", help="run the chart over an observation file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-local-scores", action="store_true")
    p.set_defaults(fn=cmd_monitor)

    p = sub.add_parser("discretize",
                       help="threshold continuous history into binary streams")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--conforming", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_discretize)

    p = sub.add_parser("scores", help="print ordinal score vectors")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_scores)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
