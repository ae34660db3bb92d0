"""WAN timing model.

Translates fragment byte sizes and link characteristics into per-sync
durations, converts those durations into the step-denominated overlap depth,
and keeps running estimates of compute-step and sync times (constants or
exponential moving averages fed by observations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LinkModel:
    """Single-ring WAN link: per-hop latency (s), bandwidth (bytes/s), group size."""

    latency: float
    bandwidth: float
    num_workers: int

    def __post_init__(self):
        if self.latency < 0:
            raise ConfigError(f"link_latency: must be >= 0, got {self.latency}")
        if self.bandwidth <= 0:
            raise ConfigError(f"link_bandwidth: must be > 0, got {self.bandwidth}")
        if self.num_workers < 2:
            raise ConfigError(f"num_workers: need >= 2 for a ring, got {self.num_workers}")


def allreduce_time(link: LinkModel, fragment_bytes: float) -> float:
    """Bidirectional ring all-reduce duration: reduce-scatter + all-gather.

    2*(M-1) bandwidth terms of S/(M*B) each, plus 2*(M-1) latency hops.
    """
    m = link.num_workers
    return 2.0 * (m - 1) * (fragment_bytes / (m * link.bandwidth)) + 2.0 * (m - 1) * link.latency


@dataclass(frozen=True)
class NetworkTimings:
    """Current estimates of seconds per local step and per fragment sync.

    ``None`` means not yet observed. ``ema_decay`` is the weight of the newest
    observation; 1.0 degenerates to "last observation wins".
    """

    t_compute: float | None = None
    t_sync: float | None = None
    ema_decay: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.ema_decay <= 1.0):
            raise ConfigError(f"ema_decay: must be in (0, 1], got {self.ema_decay}")


def observe(timings: NetworkTimings, kind: str, seconds: float) -> NetworkTimings:
    """Fold one duration observation into the moving averages.

    The first observation of a kind initializes the estimate exactly.
    """
    if seconds <= 0:
        raise ConfigError(f"observed {kind} duration must be > 0, got {seconds}")
    if kind == "compute":
        old = timings.t_compute
        new = seconds if old is None else (1.0 - timings.ema_decay) * old + timings.ema_decay * seconds
        return replace(timings, t_compute=new)
    if kind == "sync":
        old = timings.t_sync
        new = seconds if old is None else (1.0 - timings.ema_decay) * old + timings.ema_decay * seconds
        return replace(timings, t_sync=new)
    raise ConfigError(f"observe kind must be 'compute' or 'sync', got {kind!r}")


def overlap_depth(timings: NetworkTimings, sync_seconds: float) -> int:
    """Number of local steps a sync of the given duration spans, minimum 1.

    Completion is never observed mid-step, so durations round up.
    """
    if timings.t_compute is None:
        raise ConfigError("overlap_depth requires an observed t_compute")
    return max(1, math.ceil(sync_seconds / timings.t_compute))


def lognormal_factor(rng: np.random.Generator, sigma: float) -> float:
    """Multiplicative jitter draw; sigma 0 disables jitter exactly."""
    if sigma <= 0.0:
        return 1.0
    return float(np.exp(sigma * rng.standard_normal()))
