"""Reproducible Monte Carlo driver, run reports and CSV output.

Replications are grouped in fixed-size blocks.  Block ``b`` of sub-study
``s`` in experiment ``x`` always draws from the Philox stream keyed by
``(seed, crc32(x), crc32(s), b)``, and block results are concatenated in
block order before any reduction, so reports do not depend on how many
worker processes ran the blocks.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError
from .rng import key_of, stream

__all__ = ["CheckResult", "RunReport", "Context", "run", "write_outputs", "emit_plot_data"]


@dataclass(frozen=True)
class CheckResult:
    """One verified statement.

    ``gate`` rows decide the run status; other rows are reported for
    context (their ``passed`` flag is informational).
    """

    name: str
    estimate: float
    oracle: float
    se: float
    tolerance: float
    rule: str
    passed: bool
    n: int = 0
    gate: bool = True

    @classmethod
    def z(cls, name, estimate, oracle, se, k, n, gate=True):
        """|estimate - oracle| <= k * se."""
        ok = bool(abs(estimate - oracle) <= k * se) if se > 0 else bool(estimate == oracle)
        return cls(name, float(estimate), float(oracle), float(se), float(k), f"|est-oracle|<={k:g}*se", ok, int(n), gate)

    @classmethod
    def at_most(cls, name, value, tol, n=0, gate=True, oracle=0.0):
        """|value - oracle| <= tol."""
        return cls(name, float(value), float(oracle), 0.0, float(tol), f"|est-oracle|<={tol:g}", bool(abs(value - oracle) <= tol), int(n), gate)

    @classmethod
    def relative(cls, name, value, oracle, tol, n=0, gate=True, se=0.0):
        """|value - oracle| <= tol * |oracle|; ``se`` is reported only."""
        ok = bool(abs(value - oracle) <= tol * abs(oracle))
        return cls(name, float(value), float(oracle), float(se), float(tol), f"|est-oracle|<={tol:g}*|oracle|", ok, int(n), gate)

    @classmethod
    def between(cls, name, value, lo, hi, n=0, gate=True):
        ok = bool(lo <= value <= hi)
        mid = 0.5 * (lo + hi)
        return cls(name, float(value), mid, 0.0, 0.5 * (hi - lo), f"{lo:g}<=est<={hi:g}", ok, int(n), gate)

    @classmethod
    def at_least(cls, name, value, lo, n=0, gate=True):
        return cls(name, float(value), float(lo), 0.0, 0.0, f"est>={lo:g}", bool(value >= lo), int(n), gate)


@dataclass
class RunReport:
    config: dict
    checks: list
    series: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gate)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2


class Context:
    """Random streams and the block driver for one experiment run."""

    def __init__(self, cfg: ExperimentConfig, workers: int | None = None):
        self.cfg = cfg
        self.workers = int(workers or cfg.workers)
        self._exp = key_of(cfg.experiment)

    def rng(self, sub: str) -> np.random.Generator:
        """A single stream for sequential (non-block) randomness."""
        return stream(self.cfg.seed, self._exp, key_of(sub), 2**32)

    def blocks(self, fn, n_total: int, sub: str, *args, block: int | None = None) -> dict:
        """Run ``fn(rng, n, *args) -> dict of arrays`` over blocks and concatenate."""
        block = int(block or self.cfg.block)
        n_total = int(n_total)
        sizes = [min(block, n_total - i) for i in range(0, n_total, block)]
        tasks = [(fn, self.cfg.seed, self._exp, key_of(sub), b, n, args) for b, n in enumerate(sizes)]
        if self.workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as ex:
                results = list(ex.map(_run_block, tasks))
        else:
            results = [_run_block(t) for t in tasks]
        return {k: np.concatenate([r[k] for r in results]) for k in results[0]}


def _run_block(task):
    fn, seed, exp, sub, b, n, args = task
    return fn(stream(seed, exp, sub, b), n, *args)


def run(cfg: ExperimentConfig, workers: int | None = None) -> RunReport:
    """Execute the configured experiment."""
    from .experiments import REGISTRY

    if cfg.experiment not in REGISTRY:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    start = time.perf_counter()
    ctx = Context(cfg, workers)
    checks, series, notes = REGISTRY[cfg.experiment](cfg, ctx)
    return RunReport(cfg.echo(), checks, series, notes, time.perf_counter() - start)


# ---------------------------------------------------------------------------
def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


_REPORT_COLUMNS = ["experiment", "check", "estimate", "oracle", "se", "tolerance", "rule", "n", "gate", "passed"]


def emit_plot_data(series: dict, out_dir) -> list:
    """Write ``series_<name>.csv`` for each ``name -> (header, rows)``.

    A series without rows produces a header-only file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, rows) in series.items():
        p = out / f"series_{name}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        paths.append(p)
    return paths


def write_outputs(report: RunReport, out_dir) -> None:
    """report.csv, series_*.csv, summary.json and summary.txt.

    report.csv and the series files depend only on (config, seed); the wall
    time appears in the summaries only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = report.config["experiment"]
    with (out / "report.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_REPORT_COLUMNS)
        for c in report.checks:
            w.writerow([exp, c.name] + [_fmt(v) for v in (c.estimate, c.oracle, c.se, c.tolerance, c.rule, c.n, c.gate, c.passed)])
    emit_plot_data(report.series, out)
    summary = {
        "config": report.config,
        "passed": report.passed,
        "exit_code": report.exit_code,
        "wall_time_s": report.wall_time,
        "checks": [_json_safe(asdict(c)) for c in report.checks],
        "notes": report.notes,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    lines = [f"experiment: {exp}", f"seed: {report.config['seed']}", f"status: {'PASS' if report.passed else 'FAIL'}"]
    lines.append(f"wall time: {report.wall_time:.1f} s")
    for c in report.checks:
        tag = ("PASS" if c.passed else "FAIL") if c.gate else "info"
        lines.append(f"[{tag}] {c.name}: estimate={c.estimate:.6g} oracle={c.oracle:.6g} se={c.se:.3g} ({c.rule})")
    for note in report.notes:
        lines.append(f"note: {note}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def _json_safe(d):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}
