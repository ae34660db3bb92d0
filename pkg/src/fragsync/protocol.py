"""Synchronization protocols as a deterministic lockstep simulation.

Three methods share one engine, differing only in three switches:

* ``diloco``            -- single fragment (whole model), blocking sync every
                           ``period`` steps, workers adopt the new global state.
* ``streaming_diloco``  -- strided fragments synchronized round-robin, each
                           all-reduce overlapped with ``overlap`` further local
                           steps, completion blends local and global states.
* ``cocodc``            -- fragments scheduled adaptively by impact with a
                           starvation guard, completion replaces the fragment
                           with the updated global state extrapolated forward
                           by the local change rate and a diagonal curvature
                           surrogate (delay compensation).

Workers are data, not threads: every tick advances all workers one local step,
completes any due fragment sync, and initiates scheduled ones. A single WAN
channel carries at most one all-reduce at a time; initiation requests that
find it busy queue FIFO and their transmission clock starts when the channel
frees. Virtual wall-clock time accumulates per-step compute cost; overlapped
syncs add none, only DiLoCo's blocking sync stalls the clock.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InternalError, NonFiniteError
from .netsim import (
    LinkModel,
    NetworkTimings,
    allreduce_time,
    lognormal_factor,
    observe,
    overlap_depth,
)
from .optim import AdamWState, NesterovState, OptimConfig, adamw_step, outer_step, warmup_cosine_lr
from .params import FragmentView, fragment_views, gather, partition
from .scheduler import ImpactTracker, SchedulerConfig, SchedulePlan, plan, select_fragment, update_impact
from .tasks import SyntheticTask, WorkerShard, evaluate, minibatch_grad

METHODS = ("diloco", "streaming_diloco", "cocodc")

_JITTER_STREAM = 13


@dataclass
class ProtocolConfig:
    """Method selection plus the switches that define it.

    The three engine switches (``blocking``, ``schedule_mode``, ``completion``)
    default from ``method`` and exist separately so reduction experiments can
    mix them (e.g. cocodc scheduling with the blending completion).
    """

    method: str
    period: int = 100  # local steps per synchronization round
    num_fragments: int = 4
    mixing: float = 0.5  # blend weight toward the new global state
    compensation_strength: float = 0.5  # scale of the curvature surrogate
    utilization: float = 0.4  # spare-capacity fraction for adaptive scheduling
    literal_backward_rate: bool = False  # local rate as backward difference
    blocking: bool | None = None
    schedule_mode: str | None = None  # "round_robin" | "adaptive"
    completion: str | None = None  # "blend" | "compensate"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown {self.method!r}, expected one of {METHODS}")
        if self.method == "diloco":
            self.num_fragments = 1
        defaults = {
            "diloco": (True, "round_robin", "blend"),
            "streaming_diloco": (False, "round_robin", "blend"),
            "cocodc": (False, "adaptive", "compensate"),
        }[self.method]
        if self.blocking is None:
            self.blocking = defaults[0]
        if self.schedule_mode is None:
            self.schedule_mode = defaults[1]
        if self.completion is None:
            self.completion = defaults[2]

        if self.period < 1:
            raise ConfigError(f"period: must be >= 1, got {self.period}")
        if not (1 <= self.num_fragments <= self.period):
            raise ConfigError(
                f"num_fragments: must be in [1, period], got {self.num_fragments}"
            )
        if not (0.0 <= self.mixing <= 1.0):
            raise ConfigError(f"mixing: must be in [0, 1], got {self.mixing}")
        if self.compensation_strength < 0.0:
            raise ConfigError(
                f"compensation_strength: must be >= 0, got {self.compensation_strength}"
            )
        if self.schedule_mode not in ("round_robin", "adaptive"):
            raise ConfigError(f"schedule_mode: unknown {self.schedule_mode!r}")
        if self.completion not in ("blend", "compensate"):
            raise ConfigError(f"completion: unknown {self.completion!r}")
        if self.blocking and self.num_fragments != 1:
            raise ConfigError("blocking sync requires num_fragments == 1")


@dataclass(frozen=True)
class TimingConfig:
    """How step and sync durations are produced.

    ``t_sync`` is the constant per-fragment sync duration; set it to ``None``
    to derive durations from a ring ``link`` model and fragment byte sizes.
    ``fixed_overlap`` pins the overlap depth instead of computing it from
    durations. ``jitter`` adds seeded log-normal noise to every duration, in
    which case the planner runs on moving averages of the observed values.
    """

    t_compute: float = 1.0
    t_sync: float | None = 5.0
    link: LinkModel | None = None
    fixed_overlap: int | None = None
    jitter: float = 0.0
    ema_decay: float = 0.5

    def __post_init__(self):
        if self.t_compute <= 0:
            raise ConfigError(f"t_compute: must be > 0, got {self.t_compute}")
        if self.t_sync is None and self.link is None:
            raise ConfigError("timing: need t_sync or a link model")
        if self.t_sync is not None and self.t_sync <= 0:
            raise ConfigError(f"t_sync: must be > 0, got {self.t_sync}")
        if self.fixed_overlap is not None and self.fixed_overlap < 1:
            raise ConfigError(f"overlap_steps: must be >= 1, got {self.fixed_overlap}")
        if self.jitter < 0:
            raise ConfigError(f"jitter: must be >= 0, got {self.jitter}")

    def nominal_sync_seconds(self, byte_size: int) -> float:
        if self.t_sync is not None:
            return self.t_sync
        return allreduce_time(self.link, byte_size)


@dataclass
class CompensationSnapshot:
    fragment: int
    initiated_step: int
    params_at_initiation: np.ndarray


@dataclass
class WorkerState:
    worker_id: int
    params: np.ndarray
    inner: AdamWState
    local_step: int = 0
    snapshots: dict[int, CompensationSnapshot] = field(default_factory=dict)


@dataclass
class GlobalShardState:
    """Per-fragment global consensus state and its outer-optimizer momentum.

    Kept once per simulation: in a real deployment every worker holds an
    identical replica because all replicas apply the same aggregated updates
    in the same order, which the lockstep loop makes true by construction.
    """

    fragments: list[np.ndarray]
    outer: list[NesterovState]
    last_sync_step: list[int]


@dataclass
class InFlightSync:
    """One outstanding fragment all-reduce occupying the channel."""

    fragment: int
    initiated_step: int
    completes_at_step: int
    contributions: list[np.ndarray]  # per-worker pseudo-gradients, worker order
    aggregated: np.ndarray | None = None


def local_step(
    worker: WorkerState,
    task: SyntheticTask,
    shard: WorkerShard,
    batch_seed,
    lr: float | None = None,
) -> float:
    """One minibatch gradient plus AdamW update; advances the local step count."""
    if lr is not None:
        worker.inner.lr = lr
    loss, grad = minibatch_grad(task, shard, worker.params, batch_seed)
    if not np.isfinite(loss):
        raise NonFiniteError(
            f"worker {worker.worker_id}: non-finite loss at step {worker.local_step + 1}",
            step=worker.local_step + 1,
            worker=worker.worker_id,
        )
    try:
        worker.params, worker.inner = adamw_step(worker.params, grad, worker.inner)
    except NonFiniteError as e:
        raise NonFiniteError(
            f"worker {worker.worker_id}: non-finite gradient at step {worker.local_step + 1}",
            step=worker.local_step + 1,
            worker=worker.worker_id,
        ) from e
    worker.local_step += 1
    return loss


def initiate_sync(
    workers: list[WorkerState],
    global_state: GlobalShardState,
    view: FragmentView,
    step: int,
    overlap: int,
    take_snapshot: bool,
) -> InFlightSync:
    """Start a fragment all-reduce: every worker contributes its pseudo-gradient
    (current local fragment minus the fragment's most recent global state)."""
    reference = global_state.fragments[view.index]
    contributions = [gather(w.params, view) - reference for w in workers]
    if take_snapshot:
        for w in workers:
            if view.index in w.snapshots:
                raise InternalError(
                    f"worker {w.worker_id}: fragment {view.index} already has a snapshot"
                )
            w.snapshots[view.index] = CompensationSnapshot(
                view.index, step, gather(w.params, view)
            )
    return InFlightSync(view.index, step, step + overlap, contributions)


def _mean_in_worker_order(contributions: list[np.ndarray]) -> np.ndarray:
    acc = contributions[0].copy()
    for c in contributions[1:]:
        acc += c
    acc /= len(contributions)
    return acc


def aggregate(sync: InFlightSync, num_workers: int) -> np.ndarray:
    """Arithmetic mean of the per-worker pseudo-gradients, fixed worker order."""
    if len(sync.contributions) != num_workers:
        raise InternalError(
            f"sync for fragment {sync.fragment}: {len(sync.contributions)} contributions, "
            f"expected {num_workers}"
        )
    sync.aggregated = _mean_in_worker_order(sync.contributions)
    return sync.aggregated


def apply_outer(global_state: GlobalShardState, sync: InFlightSync) -> np.ndarray:
    """Outer-optimizer update of the fragment's global state from the
    aggregated pseudo-gradient; returns the new global fragment."""
    p = sync.fragment
    if sync.aggregated is None:
        raise InternalError(f"sync for fragment {p} completed without aggregation")
    new_frag, new_outer = outer_step(
        global_state.fragments[p], sync.aggregated, global_state.outer[p]
    )
    global_state.fragments[p] = new_frag
    global_state.outer[p] = new_outer
    global_state.last_sync_step[p] = sync.initiated_step
    return new_frag


def complete_sync_baseline(
    workers: list[WorkerState],
    sync: InFlightSync,
    global_state: GlobalShardState,
    mixing: float,
    view: FragmentView,
) -> None:
    """Streaming-style completion: update the global state, then blend it into
    each worker's live fragment with weight ``mixing``."""
    new_global = apply_outer(global_state, sync)
    for w in workers:
        local = gather(w.params, view)
        w.params[view.param_indices] = (1.0 - mixing) * local + mixing * new_global


def delay_compensate(
    workers: list[WorkerState],
    sync: InFlightSync,
    global_state: GlobalShardState,
    strength: float,
    period: int,
    view: FragmentView,
    literal_backward_rate: bool = False,
) -> None:
    """Compensated completion: extrapolate the freshly updated global state to
    the current step instead of blending the stale one.

    Per worker, with the fragment snapshot taken at initiation:
      displacement = current local fragment - snapshot        (progress over the overlap)
      rate         = displacement / overlap
      divergence   = (new global - snapshot) / period          (per-step scale of the
                                                                accumulated model gap)
      new fragment = new global + displacement
                     + strength * overlap * (rate * rate * divergence)

    The curvature surrogate is the elementwise square of the rate (a diagonal
    Fisher-style proxy). The update is computed in displacement form so that
    with strength 0 the result is exactly the global state plus the local
    displacement. ``literal_backward_rate`` negates the displacement term,
    preserving the backward-difference variant of the rate for fidelity
    experiments.
    """
    overlap = sync.completes_at_step - sync.initiated_step
    if overlap < 1:
        raise InternalError(f"fragment {sync.fragment}: overlap {overlap} < 1")
    new_global = apply_outer(global_state, sync)
    for w in workers:
        snap = w.snapshots.pop(sync.fragment, None)
        if snap is None:
            raise InternalError(
                f"worker {w.worker_id}: no snapshot for fragment {sync.fragment}"
            )
        current = gather(w.params, view)
        displacement = current - snap.params_at_initiation
        rate = displacement / overlap
        divergence = (new_global - snap.params_at_initiation) / period
        moved = -displacement if literal_backward_rate else displacement
        corrected = moved + strength * overlap * (rate * rate * divergence)
        w.params[view.param_indices] = new_global + corrected


class Simulation:
    """Deterministic lockstep run of one method on one task.

    Each tick: all workers take one local AdamW step, the virtual clock
    advances by the step's compute time, any due sync completes (and a queued
    one starts transmitting), and scheduled initiations fire. Blocking methods
    instead synchronize the whole model at period boundaries and charge the
    stall to the clock.
    """

    def __init__(
        self,
        task: SyntheticTask,
        protocol: ProtocolConfig,
        optim: OptimConfig | None = None,
        timing: TimingConfig | None = None,
        *,
        seed: int = 0,
        bytes_per_element: int = 4,
    ):
        self.task = task
        self.cfg = protocol
        self.optim = optim or OptimConfig()
        self.timing = timing or TimingConfig()
        self.seed = seed

        spec = partition(task.layer_sizes, protocol.num_fragments)
        self.views = fragment_views(spec, bytes_per_element)
        if len(task.shards) < 1:
            raise ConfigError("task has no worker shards")

        init = task.init_params(seed)
        dim = init.shape[0]
        self.workers = [
            WorkerState(
                m,
                init.copy(),
                AdamWState.fresh(
                    dim,
                    lr=self.optim.inner_lr,
                    beta1=self.optim.beta1,
                    beta2=self.optim.beta2,
                    eps=self.optim.eps,
                    weight_decay=self.optim.weight_decay,
                ),
            )
            for m in range(len(task.shards))
        ]
        self.global_state = GlobalShardState(
            fragments=[gather(init, v) for v in self.views],
            outer=[
                NesterovState.fresh(v.size, self.optim.outer_lr, self.optim.outer_momentum)
                for v in self.views
            ],
            last_sync_step=[0] * len(self.views),
        )
        self.tracker = ImpactTracker.fresh(protocol.num_fragments)
        self.timings = NetworkTimings(
            t_compute=self.timing.t_compute,
            t_sync=self._mean_nominal_sync_seconds(),
            ema_decay=self.timing.ema_decay,
        )
        self._jitter_rng = np.random.default_rng((seed, _JITTER_STREAM))

        self.step_index = 0  # completed lockstep ticks
        self.clock = 0.0  # virtual seconds
        self.in_flight: InFlightSync | None = None
        self.queue: deque[int] = deque()
        self._round_robin = 0
        self._plan: SchedulePlan | None = None
        self.sync_log: list[tuple[int, int]] = []  # (initiation step, fragment)
        self.bytes_transmitted = 0
        self.eval_points: list[tuple[int, float, float, float]] = []
        self._total_steps: int | None = None

    # -- timing helpers -----------------------------------------------------

    def _mean_nominal_sync_seconds(self) -> float:
        vals = [self.timing.nominal_sync_seconds(v.byte_size) for v in self.views]
        return sum(vals) / len(vals)

    def _compute_seconds(self) -> float:
        return self.timing.t_compute * lognormal_factor(self._jitter_rng, self.timing.jitter)

    def _sync_seconds(self, view: FragmentView) -> float:
        return self.timing.nominal_sync_seconds(view.byte_size) * lognormal_factor(
            self._jitter_rng, self.timing.jitter
        )

    def _overlap_for(self, sync_seconds: float) -> int:
        if self.timing.fixed_overlap is not None:
            return self.timing.fixed_overlap
        return overlap_depth(self.timings, sync_seconds)

    # -- schedule -----------------------------------------------------------

    def _replan(self) -> None:
        if self.cfg.schedule_mode == "adaptive":
            self._plan = plan(
                SchedulerConfig(self.cfg.utilization, self.cfg.period, self.cfg.num_fragments),
                self.timings,
            )
        else:
            k = self.cfg.num_fragments
            self._plan = SchedulePlan(num_syncs=k, interval=self.cfg.period // k)

    def _slot_due(self, t: int) -> bool:
        offset = t - ((t - 1) // self.cfg.period) * self.cfg.period  # in [1, period]
        return offset % self._plan.interval == 0 and offset // self._plan.interval <= self._plan.num_syncs

    def _choose_fragment(self, t: int) -> int:
        if self.cfg.schedule_mode == "round_robin":
            frag = self._round_robin % self.cfg.num_fragments
            self._round_robin += 1
            return frag
        busy = {self.in_flight.fragment} if self.in_flight is not None else set()
        return select_fragment(
            self.tracker, t, self.cfg.period, self.cfg.num_fragments, busy=busy
        )

    # -- channel ------------------------------------------------------------

    def _start_transmission(self, fragment: int, t: int) -> None:
        if self.in_flight is not None:
            raise InternalError("channel already busy at transmission start")
        view = self.views[fragment]
        duration = self._sync_seconds(view)
        if self.timing.jitter > 0:
            self.timings = observe(self.timings, "sync", duration)
        overlap = self._overlap_for(duration)
        self.in_flight = initiate_sync(
            self.workers,
            self.global_state,
            view,
            t,
            overlap,
            take_snapshot=(self.cfg.completion == "compensate"),
        )
        self.sync_log.append((t, fragment))
        self.bytes_transmitted += view.byte_size

    def _complete(self, sync: InFlightSync) -> None:
        aggregate(sync, len(self.workers))
        view = self.views[sync.fragment]
        if self.cfg.completion == "compensate":
            delay_compensate(
                self.workers,
                sync,
                self.global_state,
                self.cfg.compensation_strength,
                self.cfg.period,
                view,
                self.cfg.literal_backward_rate,
            )
        else:
            complete_sync_baseline(self.workers, sync, self.global_state, self.cfg.mixing, view)
        update_impact(self.tracker, sync.fragment, sync.aggregated, sync.initiated_step)

    def _blocking_sync(self, t: int) -> None:
        view = self.views[0]
        duration = self._sync_seconds(view)
        if self.timing.jitter > 0:
            self.timings = observe(self.timings, "sync", duration)
        stall_steps = overlap_depth(self.timings, duration)
        # Synchronous exchange: the container never enters the channel.
        sync = InFlightSync(0, t, t, [
            gather(w.params, view) - self.global_state.fragments[0] for w in self.workers
        ])
        aggregate(sync, len(self.workers))
        new_global = apply_outer(self.global_state, sync)
        for w in self.workers:
            w.params[view.param_indices] = new_global
        update_impact(self.tracker, 0, sync.aggregated, t)
        self.sync_log.append((t, 0))
        self.bytes_transmitted += view.byte_size
        # Workers idle for the whole all-reduce: charge it to the clock.
        self.clock += stall_steps * self.timings.t_compute

    # -- main loop ----------------------------------------------------------

    def _lr_at(self, t: int) -> float:
        if not self.optim.use_lr_schedule:
            return self.optim.inner_lr
        total = self._total_steps or self.cfg.period
        return warmup_cosine_lr(
            t - 1, self.optim.inner_lr, self.optim.warmup_steps, total, self.optim.final_lr_frac
        )

    def step(self) -> None:
        """Advance the lockstep simulation by one tick."""
        t = self.step_index + 1
        if (t - 1) % self.cfg.period == 0 or self._plan is None:
            self._replan()

        lr = self._lr_at(t)
        for w in self.workers:
            shard = self.task.shards[w.worker_id]
            local_step(w, self.task, shard, batch_seed=(shard.seed, t), lr=lr)

        dt = self._compute_seconds()
        self.clock += dt
        if self.timing.jitter > 0:
            self.timings = observe(self.timings, "compute", dt)

        if self.in_flight is not None and self.in_flight.completes_at_step == t:
            sync, self.in_flight = self.in_flight, None
            self._complete(sync)
            if self.queue:
                self._start_transmission(self.queue.popleft(), t)

        if not self.cfg.blocking and self._slot_due(t):
            fragment = self._choose_fragment(t)
            if self.in_flight is None and not self.queue:
                self._start_transmission(fragment, t)
            else:
                self.queue.append(fragment)

        if self.cfg.blocking and t % self.cfg.period == 0:
            self._blocking_sync(t)

        self.step_index = t

    def mean_params(self) -> np.ndarray:
        """Cross-worker average of the live parameters (evaluation target)."""
        acc = self.workers[0].params.copy()
        for w in self.workers[1:]:
            acc += w.params
        return acc / len(self.workers)

    def run(self, total_steps: int, eval_every: int = 50) -> "Simulation":
        """Run ``total_steps`` ticks, recording an eval point every
        ``eval_every`` steps (plus step 0 and the final step)."""
        if total_steps < 1:
            raise ConfigError(f"total_steps: must be >= 1, got {total_steps}")
        if eval_every < 1:
            raise ConfigError(f"eval_every: must be >= 1, got {eval_every}")
        self._total_steps = total_steps
        self._record_eval(0)
        for _ in range(total_steps):
            self.step()
            t = self.step_index
            if t % eval_every == 0 or t == total_steps:
                self._record_eval(t)
        return self

    def _record_eval(self, t: int) -> None:
        if self.eval_points and self.eval_points[-1][0] == t:
            return
        report = evaluate(self.task, self.mean_params(), step=t)
        self.eval_points.append((t, self.clock, report.val_loss, report.val_ppl))

    def sync_counts(self) -> list[int]:
        counts = [0] * self.cfg.num_fragments
        for _, frag in self.sync_log:
            counts[frag] += 1
        return counts
