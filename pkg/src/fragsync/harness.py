"""Experiment runner: seed sweeps, method comparison, metrics persistence.

One :class:`RunRecord` per (method, seed). Reruns of the same config are
byte-identical: all randomness flows from the seeds in the config, and output
files are written with stable ordering and formatting. Curve files are the
plotting interface; the JSON summary carries per-method medians,
steps-to-threshold, transmitted bytes and per-fragment sync counts.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .config import ExperimentConfig
from .errors import ConfigError, NonFiniteError
from .protocol import Simulation
from .tasks import make_task

CSV_HEADER = "step,virtual_seconds,val_loss,val_ppl"


@dataclass
class EvalPoint:
    step: int
    virtual_seconds: float
    val_loss: float
    val_ppl: float


@dataclass
class RunRecord:
    method: str
    seed: int
    points: list[EvalPoint] = field(default_factory=list)
    final_loss: float | None = None
    final_ppl: float | None = None
    steps_to_threshold: int | None = None
    virtual_seconds: float = 0.0
    bytes_transmitted: int = 0
    sync_counts: list[int] = field(default_factory=list)
    failed: bool = False
    failure: str | None = None


def steps_to_threshold(record: RunRecord, threshold: float, metric: str = "ppl") -> int | None:
    """First eval step whose metric is at or below the threshold, else None."""
    if metric not in ("ppl", "loss"):
        raise ConfigError(f"threshold_metric: must be 'ppl' or 'loss', got {metric!r}")
    for pt in record.points:
        value = pt.val_ppl if metric == "ppl" else pt.val_loss
        if value <= threshold:
            return pt.step
    return None


def run_single(cfg: ExperimentConfig, method: str, seed: int) -> RunRecord:
    """Run one (method, seed) simulation and package the record."""
    task = make_task(cfg.task_config(seed))
    sim = Simulation(
        task,
        cfg.protocol_config(method),
        cfg.optim_config(),
        cfg.timing_config(method),
        seed=seed,
        bytes_per_element=cfg.bytes_per_element,
    )
    record = RunRecord(method=method, seed=seed)
    try:
        sim.run(cfg.total_steps, cfg.eval_every)
    except NonFiniteError as e:
        record.failed = True
        record.failure = str(e)
    record.points = [EvalPoint(*pt) for pt in sim.eval_points]
    if record.points:
        record.final_loss = record.points[-1].val_loss
        record.final_ppl = record.points[-1].val_ppl
        record.virtual_seconds = record.points[-1].virtual_seconds
    record.bytes_transmitted = sim.bytes_transmitted
    record.sync_counts = sim.sync_counts()
    record.steps_to_threshold = steps_to_threshold(record, cfg.threshold, cfg.threshold_metric)
    return record


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """All (method, seed) runs of one experiment, in declaration order."""
    return [run_single(cfg, method, seed) for method in cfg.methods for seed in cfg.seeds]


def _median(values: list[float]) -> float | None:
    if not values:
        return None
    m = statistics.median(values)
    return None if math.isinf(m) else float(m)


def summarize(records: list[RunRecord], cfg: ExperimentConfig) -> dict:
    """Per-method aggregation for the JSON summary and the compare command."""
    methods: dict[str, dict] = {}
    for method in cfg.methods:
        runs = [r for r in records if r.method == method]
        steps = [r.steps_to_threshold for r in runs]
        steps_or_inf = [math.inf if s is None else s for s in steps]
        methods[method] = {
            "seeds": [r.seed for r in runs],
            "failed_runs": sum(r.failed for r in runs),
            "final_loss": [r.final_loss for r in runs],
            "final_ppl": [r.final_ppl for r in runs],
            "median_final_loss": _median([r.final_loss for r in runs if r.final_loss is not None]),
            "median_final_ppl": _median([r.final_ppl for r in runs if r.final_ppl is not None]),
            "steps_to_threshold": steps,
            "median_steps_to_threshold": _median(steps_or_inf),
            "runs_not_reaching_threshold": sum(s is None for s in steps),
            "virtual_seconds": [r.virtual_seconds for r in runs],
            "median_virtual_seconds": _median([r.virtual_seconds for r in runs]),
            "bytes_transmitted": [r.bytes_transmitted for r in runs],
            "sync_counts": [r.sync_counts for r in runs],
        }
    return {
        "threshold": {"metric": cfg.threshold_metric, "value": cfg.threshold},
        "total_steps": cfg.total_steps,
        "methods": methods,
    }


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    os.replace(tmp, path)


def curve_csv(record: RunRecord) -> str:
    lines = [CSV_HEADER]
    for pt in record.points:
        lines.append(f"{pt.step},{pt.virtual_seconds!r},{pt.val_loss!r},{pt.val_ppl!r}")
    return "\n".join(lines) + "\n"


def emit(records: list[RunRecord], cfg: ExperimentConfig, out_dir: str | Path) -> list[Path]:
    """Write one curve CSV per run, a JSON summary, and the resolved config.

    Files are written atomically (temp file + rename) with LF endings.
    """
    if not records:
        raise ConfigError("emit: no records to write")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from e

    written: list[Path] = []
    for record in records:
        path = out / f"curve_{record.method}_seed{record.seed}.csv"
        _atomic_write(path, curve_csv(record))
        written.append(path)

    summary_path = out / "summary.json"
    _atomic_write(summary_path, json.dumps(summarize(records, cfg), indent=2, sort_keys=True) + "\n")
    written.append(summary_path)

    config_path = out / "config.yaml"
    _atomic_write(config_path, yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    written.append(config_path)
    return written
