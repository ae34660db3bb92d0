"""Adaptive fragment transmission: capacity planning, impact tracking, selection.

Capacity planning estimates how many fragment syncs fit into the compute time
of one period of local steps, scaled by a utilization factor, floored at one
sync per fragment. Impact tracking scores each fragment by the L2 norm of its
last aggregated pseudo-gradient normalized by its sync interval. Selection is
deterministic: a starvation guard forces any fragment unsynchronized for a
full period, otherwise the highest-impact fragment wins; ties break toward
the lowest index so every worker reaches the same decision from the shared
history alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InternalError
from .netsim import NetworkTimings


@dataclass(frozen=True)
class SchedulerConfig:
    utilization: float  # fraction of spare channel capacity to fill, in (0, 1]
    period: int  # local steps per round
    num_fragments: int

    def __post_init__(self):
        if not (0.0 < self.utilization <= 1.0):
            raise ConfigError(f"utilization: must be in (0, 1], got {self.utilization}")
        if self.period < 1:
            raise ConfigError(f"period: must be >= 1, got {self.period}")
        if not (1 <= self.num_fragments <= self.period):
            raise ConfigError(
                f"num_fragments: must be in [1, period], got {self.num_fragments}"
            )


@dataclass(frozen=True)
class SchedulePlan:
    num_syncs: int  # target syncs per period
    interval: int  # steps between consecutive initiations


def plan(cfg: SchedulerConfig, timings: NetworkTimings) -> SchedulePlan:
    """Target sync count and initiation interval for one period.

    num_syncs = max(num_fragments, floor(utilization * period * t_compute / t_sync)),
    capped at one initiation per step so the interval stays >= 1.
    """
    if timings.t_compute is None or timings.t_sync is None:
        raise ConfigError("plan() requires observed t_compute and t_sync")
    if timings.t_compute <= 0 or timings.t_sync <= 0:
        raise ConfigError("plan() requires positive timing estimates")
    capacity = cfg.utilization * (cfg.period * timings.t_compute) / timings.t_sync
    n = max(cfg.num_fragments, int(capacity))
    n = min(n, cfg.period)
    return SchedulePlan(num_syncs=n, interval=cfg.period // n)


@dataclass
class ImpactTracker:
    """Per-fragment change-rate metric and last-initiation bookkeeping.

    Impact starts at +inf so never-synchronized fragments win selection first.
    """

    impact: np.ndarray
    last_sync_step: np.ndarray

    @classmethod
    def fresh(cls, num_fragments: int) -> "ImpactTracker":
        return cls(
            impact=np.full(num_fragments, np.inf, dtype=np.float64),
            last_sync_step=np.zeros(num_fragments, dtype=np.int64),
        )

    @property
    def num_fragments(self) -> int:
        return int(self.impact.shape[0])


def update_impact(
    tracker: ImpactTracker, fragment: int, aggregated_delta: np.ndarray, step: int
) -> ImpactTracker:
    """Record a completed sync: impact = ||delta||_2 / interval, interval being
    the steps since this fragment's previous initiation."""
    interval = int(step - tracker.last_sync_step[fragment])
    if interval <= 0:
        raise InternalError(
            f"fragment {fragment}: sync interval {interval} at step {step} "
            "(two completions cannot share a step on a serialized channel)"
        )
    tracker.impact[fragment] = float(np.linalg.norm(aggregated_delta)) / interval
    tracker.last_sync_step[fragment] = step
    return tracker


def select_fragment(
    tracker: ImpactTracker,
    step: int,
    period: int,
    num_fragments: int | None = None,
    busy: frozenset[int] | set[int] = frozenset(),
) -> int:
    """Pick the next fragment to synchronize.

    Starvation guard first: the lowest-indexed fragment that has waited at
    least ``period`` steps. Otherwise the highest impact wins, ties broken by
    lowest index. ``busy`` removes fragments with an in-flight sync from
    consideration; if that would leave no candidate, the exclusion is ignored
    (the request queues behind the channel anyway).
    """
    k = tracker.num_fragments if num_fragments is None else num_fragments
    if k != tracker.num_fragments:
        raise InternalError(
            f"tracker covers {tracker.num_fragments} fragments, caller expects {k}"
        )
    candidates = [p for p in range(k) if p not in busy]
    if not candidates:
        candidates = list(range(k))
    for p in candidates:
        if step - tracker.last_sync_step[p] >= period:
            return p
    best = candidates[0]
    for p in candidates[1:]:
        if tracker.impact[p] > tracker.impact[best]:
            best = p
    return best
