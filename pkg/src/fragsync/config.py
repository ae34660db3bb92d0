"""Experiment configuration: one flat declarative YAML file.

Every key is top-level so `--set key=value` overrides are unambiguous. Unknown
keys are rejected. Scalar keys may hold lists only when expanded by the sweep
command. Module-specific validation happens in the modules themselves: loading
a config eagerly builds each sub-config once so errors surface at load time
with the offending key named.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .netsim import LinkModel
from .optim import OptimConfig
from .params import partition
from .protocol import METHODS, ProtocolConfig, TimingConfig
from .scheduler import SchedulerConfig
from .tasks import TaskConfig, make_task

# Keys that are naturally list-valued and therefore never sweep axes.
_LIST_KEYS = {"methods", "seeds", "hidden_sizes"}


@dataclass
class ExperimentConfig:
    # what to run
    methods: list[str] = field(default_factory=lambda: ["cocodc"])
    seeds: list[int] = field(default_factory=lambda: [0])
    total_steps: int = 2000
    eval_every: int = 50
    # synchronization protocol
    num_workers: int = 4
    period: int = 100
    num_fragments: int = 4
    overlap_steps: int | None = 5  # fixed overlap depth; null -> computed from timing
    utilization: float = 0.4
    compensation_strength: float = 0.5
    mixing: float = 0.5
    literal_backward_rate: bool = False
    # task
    task: str = "logistic_regression"
    dim: int = 32
    num_classes: int = 16
    hidden_sizes: list[int] = field(default_factory=list)
    num_layers: int = 12
    samples_per_worker: int = 512
    val_samples: int = 1024
    batch_size: int = 8
    noise: float = 0.5
    noniid_alpha: float = math.inf
    data_seed: int | None = None  # null -> task data varies with the run seed
    # optimizer
    inner_lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    weight_decay: float = 0.0
    outer_lr: float = 0.7
    outer_momentum: float = 0.9
    use_lr_schedule: bool = False
    warmup_steps: int = 100
    final_lr_frac: float = 0.1
    # timing model
    t_compute: float = 1.0
    t_sync: float | None = 5.0
    link_latency: float | None = None
    link_bandwidth: float | None = None
    jitter: float = 0.0
    ema_decay: float = 0.5
    bytes_per_element: int = 4
    # reporting
    threshold: float = 20.0
    threshold_metric: str = "ppl"  # "ppl" | "loss"
    out: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods: must name at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r}, expected one of {METHODS}")
        if not self.seeds:
            raise ConfigError("seeds: must list at least one seed")
        if self.threshold_metric not in ("ppl", "loss"):
            raise ConfigError(
                f"threshold_metric: must be 'ppl' or 'loss', got {self.threshold_metric!r}"
            )
        if (self.link_latency is None) != (self.link_bandwidth is None):
            raise ConfigError("link_latency/link_bandwidth: set both or neither")
        # Let each module validate its own slice now, so bad keys fail at load.
        task_cfg = self.task_config(seed=self.seeds[0])
        for m in self.methods:
            self.protocol_config(m)
            self.timing_config(m)
        if "cocodc" in self.methods:
            SchedulerConfig(self.utilization, self.period, self.num_fragments)
        self.optim_config()
        # Geometry probe with minimal data: catches unfragmentable layer layouts
        # (num_fragments vs layers vs parameter count) at load time.
        probe = dataclasses.replace(
            task_cfg, samples_per_worker=task_cfg.batch_size, val_samples=1
        )
        partition(make_task(probe).layer_sizes, self.num_fragments)

    # -- sub-config builders -------------------------------------------------

    def task_config(self, seed: int) -> TaskConfig:
        return TaskConfig(
            kind=self.task,
            dim=self.dim,
            num_classes=self.num_classes,
            hidden_sizes=tuple(self.hidden_sizes),
            num_layers=self.num_layers,
            num_workers=self.num_workers,
            samples_per_worker=self.samples_per_worker,
            val_samples=self.val_samples,
            batch_size=self.batch_size,
            noise=self.noise,
            noniid_alpha=self.noniid_alpha,
            seed=self.data_seed if self.data_seed is not None else seed,
        )

    def protocol_config(self, method: str) -> ProtocolConfig:
        return ProtocolConfig(
            method=method,
            period=self.period,
            num_fragments=self.num_fragments,
            mixing=self.mixing,
            compensation_strength=self.compensation_strength,
            utilization=self.utilization,
            literal_backward_rate=self.literal_backward_rate,
        )

    def timing_config(self, method: str) -> TimingConfig:
        link = None
        if self.link_latency is not None:
            link = LinkModel(self.link_latency, self.link_bandwidth, self.num_workers)
        t_sync = self.t_sync
        fixed_overlap = self.overlap_steps
        if method == "diloco":
            # The constant t_sync is calibrated per fragment (model/num_fragments);
            # a blocking full-model all-reduce moves num_fragments times the bytes.
            if t_sync is not None:
                t_sync = t_sync * self.num_fragments
            # The stall length follows from the full-model duration, not the
            # per-fragment overlap setting.
            fixed_overlap = None
        return TimingConfig(
            t_compute=self.t_compute,
            t_sync=t_sync,
            link=link,
            fixed_overlap=fixed_overlap,
            jitter=self.jitter,
            ema_decay=self.ema_decay,
        )

    def optim_config(self) -> OptimConfig:
        return OptimConfig(
            inner_lr=self.inner_lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
            outer_lr=self.outer_lr,
            outer_momentum=self.outer_momentum,
            use_lr_schedule=self.use_lr_schedule,
            warmup_steps=self.warmup_steps,
            final_lr_frac=self.final_lr_frac,
        )

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        if math.isinf(d["noniid_alpha"]):
            d["noniid_alpha"] = ".inf"
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_FLOAT_KEYS = {n for n, f in _FIELDS.items() if "float" in str(f.type)}
_INT_KEYS = {n for n, f in _FIELDS.items() if str(f.type).startswith("int")}


def _coerce(key: str, value: Any) -> Any:
    """Normalize YAML scalars: YAML 1.1 reads '1e-4' and '.inf' as strings."""
    if value is None or key not in (_FLOAT_KEYS | _INT_KEYS):
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, str):
            if value.lower().lstrip(".+-") in ("inf", "infinity"):
                return -math.inf if value.lstrip(".").startswith("-") else math.inf
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{key}: not a number: {value!r}") from None
        if isinstance(value, (int, float)):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {value!r}") from None
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config from a parsed mapping, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a mapping")
    data = dict(raw)
    if "method" in data:
        if "methods" in data:
            raise ConfigError("method: give either 'method' or 'methods', not both")
        data["methods"] = [data.pop("method")]
    unknown = set(data) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kwargs = {k: _coerce(k, v) for k, v in data.items()}
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def apply_overrides(raw: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    """Apply repeatable ``--set key=value`` pairs; values parse as YAML."""
    out = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set: expected key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in _FIELDS and key != "method":
            raise ConfigError(f"--set: unknown config key {key!r}")
        out[key] = yaml.safe_load(value)
    return out


def load_raw(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = load_raw(path)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return from_dict(raw)


def sweep_axes(raw: dict[str, Any]) -> list[str]:
    """Scalar keys holding list values: the sweep dimensions of a config."""
    return sorted(
        k for k, v in raw.items()
        if k in _FIELDS and k not in _LIST_KEYS and isinstance(v, list)
    )


def sweep_cases(raw: dict[str, Any]) -> list[dict[str, Any]]:
    """Expand list-valued scalar keys into their cartesian product.

    Keys that are list-typed by nature (methods, seeds, hidden_sizes) are left
    alone. Axis order follows sorted key names for reproducible case numbering.
    """
    axes = sweep_axes(raw)
    if not axes:
        return [dict(raw)]
    cases: list[dict[str, Any]] = [dict(raw)]
    for key in axes:
        expanded = []
        for case in cases:
            for value in raw[key]:
                nxt = dict(case)
                nxt[key] = value
                expanded.append(nxt)
        cases = expanded
    return cases
