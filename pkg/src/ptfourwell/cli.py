"""Command line front end: configuration files, runs, plots and sweeps.

Usage::

    ptfourwell run CONFIG -o OUTDIR [--seed S]
    ptfourwell plot OUTDIR
    ptfourwell sweep CONFIG --param NAME --values V1,V2 --seeds N -o OUTDIR

A config file is flat ``key = value`` text whose keys are the
:class:`~ptfourwell.dynamics.RunConfig` field names (``g`` may replace ``u``,
with ``u = g / (n_total - 1)``). ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from .dynamics import RunConfig, RunRecord, run, sample_row, with_overrides
from .errors import ConfigError

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "t", "n1", "n2", "n3", "n4", "jt12", "jt23", "jt34", "c23",
    "J12", "J34", "eps1", "eps4", "P2", "P4", "norm",
)
SWEEP_COLUMNS = (
    "param", "value", "seed", "termination", "t_c", "max_residual", "initial_P4",
    "jt23_target", "c23_target",
)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DEGENERATE = 0, 1, 2, 3

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, raw):
    kind = _FIELD_TYPES.get(key, "float")
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        value = float(raw)
    except ValueError:
        raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    if kind == "int":
        if not value.is_integer():
            raise ValueError(f"{key}: expected an integer, got {raw!r}")
        return int(value)
    return value


def parse_config_text(text: str, base: RunConfig = None) -> RunConfig:
    """Parse ``key = value`` lines over ``base`` (defaults if omitted).

    Every problem (syntax, unknown key, bad value, violated invariant) is
    collected and reported together in one :class:`ConfigError`.
    """
    problems = []
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key = value, got {line!r}")
            continue
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES and key != "g":
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            problems.append(f"line {lineno}: {exc}")
    if "g" in values:
        g = values.pop("g")
        if "u" in values:
            problems.append("give either u or g, not both")
        else:
            n_total = values.get("n_total", (base or RunConfig()).n_total)
            values["u"] = g / (n_total - 1) if n_total > 1 else 0.0
    config = with_overrides(base or RunConfig(), **values)
    problems.extend(config.problems())
    if problems:
        raise ConfigError(problems)
    return config


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def format_config(config: RunConfig) -> str:
    lines = [f"{key} = {_format_value(value)}" for key, value in config.as_dict().items()]
    return "\n".join(lines) + "\n"


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def timeseries_text(record: RunRecord) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for sample in record.samples:
        row = sample_row(sample)
        buf.write(",".join(_fmt(row[c]) for c in CSV_COLUMNS) + "\n")
    return buf.getvalue()


def read_timeseries(path) -> dict:
    """Columns of a time-series CSV as lists of floats."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no time series at {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path} is empty")
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        data = {c: [] for c in CSV_COLUMNS}
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            for c, v in zip(CSV_COLUMNS, row):
                data[c].append(float(v))
    if not data["t"]:
        raise ValueError(f"{path} has a header but no samples")
    return data


def summary_dict(record: RunRecord) -> dict:
    """Run summary without wall-clock data, so it is reproducible byte for byte."""
    t_c = record.termination_time if record.termination == "collapsed" else None
    return {
        "termination": record.termination,
        "t_c": t_c,
        "termination_time": record.termination_time,
        "message": record.message,
        "constraint_residuals": record.constraint_residuals,
        "initial_purity2": record.initial_purity2,
        "initial_purity4": record.initial_purity4,
        "samples": len(record.samples),
        "steps": record.steps,
        "rejected_steps": record.rejected,
        "renormalizations": record.renormalizations,
        "max_norm_drift": record.max_norm_drift,
        "max_number_drift": record.max_number_drift,
        "version": record.version,
    }


def _write(path: Path, text: str):
    with path.open("w", newline="\n") as fh:
        fh.write(text)


def write_outputs(record: RunRecord, outdir) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write(outdir / "timeseries.csv", timeseries_text(record))
    _write(outdir / "summary.json", json.dumps(summary_dict(record), indent=2) + "\n")
    _write(outdir / "resolved.config", format_config(record.config))
    return outdir


def exit_status(record: RunRecord) -> int:
    if record.termination in ("completed", "collapsed"):
        return EXIT_OK
    if record.termination == "degenerate":
        return EXIT_DEGENERATE
    return EXIT_ERROR


def cmd_run(config_path, outdir, seed=None) -> int:
    try:
        config = load_config(config_path)
        if seed is not None:
            config = with_overrides(config, seed=seed)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    record = run(config)
    write_outputs(record, outdir)
    log.info("wall time %.2f s", record.wall_time)
    print(f"{record.termination} at t={record.termination_time:.6g}: {outdir}")
    return exit_status(record)


_PLOT_TEMPLATE = '''"""Six-panel view of a controlled four-well run. Generated file."""

import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
JT23_TARGET = {jt23!r}
C23_TARGET = {c23!r}
T_C = {t_c!r}


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        sys.exit(f"{{path}} holds no samples")
    return {{k: [float(r[k]) for r in rows] for k in rows[0]}}


def main():
    d = load(HERE / "timeseries.csv")
    t = d["t"]
    fig, axes = plt.subplots(3, 2, figsize=(10, 10), sharex=True)
    ax = axes.ravel()
    for k in ("n1", "n2", "n3", "n4"):
        ax[0].plot(t, d[k], label=k)
    ax[0].set_ylabel("occupation")
    ax[1].plot(t, d["jt23"], label="jt23")
    ax[1].plot(t, d["c23"], label="c23")
    ax[1].axhline(JT23_TARGET, ls="--", c="C0", lw=0.8)
    ax[1].axhline(C23_TARGET, ls="--", c="C1", lw=0.8)
    ax[2].plot(t, d["J12"], label="J12")
    ax[2].plot(t, d["J34"], label="J34")
    ax[2].set_ylabel("tunnelling rate")
    ax[3].plot(t, d["jt12"], label="jt12")
    ax[3].plot(t, d["jt34"], label="jt34")
    ax[4].plot(t, d["eps1"], label="eps1")
    ax[4].plot(t, d["eps4"], label="eps4")
    ax[4].set_ylabel("onsite energy")
    ax[5].plot(t, d["P2"], label="P2")
    ax[5].plot(t, d["P4"], label="P4")
    ax[5].set_ylabel("purity")
    for label, a in zip("abcdef", ax):
        if T_C is not None:
            a.axvline(T_C, c="k", ls=":", lw=0.8)
        a.set_title(f"({{label}})", loc="left")
        a.legend(fontsize="small")
    for a in axes[-1]:
        a.set_xlabel("t")
    fig.tight_layout()
    out = HERE / "timeseries.png"
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()
'''


def plot_script(outdir) -> str:
    """Source of a matplotlib script drawing the six panels of a run directory."""
    outdir = Path(outdir)
    read_timeseries(outdir / "timeseries.csv")
    config = load_config(outdir / "resolved.config") if (outdir / "resolved.config").is_file() \
        else RunConfig()
    t_c = None
    summary_path = outdir / "summary.json"
    if summary_path.is_file():
        t_c = json.loads(summary_path.read_text()).get("t_c")
    ratio = config.gamma / config.j
    return _PLOT_TEMPLATE.format(
        jt23=2 * config.n * ratio,
        c23=2 * config.n * math.sqrt(1 - ratio**2),
        t_c=t_c,
    )


def cmd_plot(outdir) -> int:
    try:
        text = plot_script(outdir)
    except (OSError, ValueError, ConfigError) as exc:
        print(f"cannot plot: {exc}", file=sys.stderr)
        return EXIT_ERROR
    path = Path(outdir) / "plot_timeseries.py"
    _write(path, text)
    print(path)
    return EXIT_OK


def parse_values(text: str):
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise ConfigError(["sweep needs at least one value"])
    return values


def _sweep_one(task):
    base, param, raw, seed, outdir = task
    row = {"param": param, "value": raw, "seed": seed}
    try:
        config = parse_config_text(f"{param} = {raw}\nseed = {seed}\n", base)
    except ConfigError as exc:
        row.update(termination="invalid", t_c=None, max_residual=None, initial_P4=None,
                   jt23_target=None, c23_target=None)
        log.warning("skipping %s=%s seed %d: %s", param, raw, seed, exc)
        return row
    record = run(config)
    write_outputs(record, outdir)
    residuals = record.constraint_residuals
    ratio = config.gamma / config.j
    row.update(
        termination=record.termination,
        t_c=record.termination_time if record.termination == "collapsed" else None,
        max_residual=max(abs(r) for r in residuals) if residuals else None,
        initial_P4=record.initial_purity4,
        jt23_target=2 * config.n * ratio,
        c23_target=2 * config.n * math.sqrt(1 - ratio**2),
    )
    return row


def sweep(base: RunConfig, param: str, values, seeds: int, outdir, workers: int = 1):
    """Run every (value, seed) pair; returns the aggregate rows in input order."""
    if param not in _FIELD_TYPES and param != "g":
        raise ConfigError([f"unknown sweep parameter {param!r}"])
    if not values:
        raise ConfigError(["sweep needs at least one value"])
    if seeds < 1:
        raise ConfigError(["seeds must be >= 1"])
    outdir = Path(outdir)
    tasks = [
        (base, param, raw, seed, outdir / f"{param}={raw}" / f"seed={seed}")
        for raw in values
        for seed in range(base.seed, base.seed + seeds)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    outdir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(_sweep_cell(row[c]) for c in SWEEP_COLUMNS) + "\n")
    _write(outdir / "sweep.csv", buf.getvalue())
    return rows


def _sweep_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return _fmt(value)
    return str(value)


def cmd_sweep(config_path, param, values, seeds, outdir, workers=1, seed=None) -> int:
    try:
        base = load_config(config_path)
        if seed is not None:
            base = with_overrides(base, seed=seed)
        rows = sweep(base, param, parse_values(values), seeds, outdir, workers)
    except ConfigError as exc:
        print(f"invalid sweep: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    counts = {}
    for row in rows:
        counts[row["termination"]] = counts.get(row["termination"], 0) + 1
    print(f"{len(rows)} runs: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptfourwell",
        description="Feedback-controlled four-well Bose-Hubbard simulations.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="prepare the initial state and integrate")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, help="override the config seed")

    p_plot = sub.add_parser("plot", help="emit a plotting script for a run directory")
    p_plot.add_argument("outdir")

    p_sweep = sub.add_parser("sweep", help="scan one parameter over several seeds")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated list")
    p_sweep.add_argument("--seeds", type=int, default=1, help="number of seeds per value")
    p_sweep.add_argument("--seed", type=int, help="first seed (default: config seed)")
    p_sweep.add_argument("-o", "--output", default="sweep")
    p_sweep.add_argument("-j", "--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.output, args.seed)
    if args.command == "plot":
        return cmd_plot(args.outdir)
    return cmd_sweep(args.config, args.param, args.values, args.seeds, args.output,
                     args.workers, args.seed)


if __name__ == "__main__":
    sys.exit(main())
