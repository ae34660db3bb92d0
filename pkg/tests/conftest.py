import numpy as np

from fragsync.protocol import ProtocolConfig, Simulation, TimingConfig
from fragsync.tasks import TaskConfig, WorkerShard, make_task


def quick_task(**overrides):
    base = dict(
        kind="least_squares",
        dim=24,
        num_layers=12,
        num_workers=4,
        samples_per_worker=64,
        val_samples=64,
        batch_size=4,
        noise=0.1,
        noniid_alpha=1.0,
        seed=7,
    )
    base.update(overrides)
    return make_task(TaskConfig(**base))


def symmetric_task(**overrides):
    """Every worker gets byte-identical data and batch seeds."""
    task = quick_task(**overrides)
    first = task.shards[0]
    task.shards = [
        WorkerShard(m, first.features, first.targets, first.seed)
        for m in range(len(task.shards))
    ]
    return task


def fixed_timing(**overrides):
    base = dict(t_compute=1.0, t_sync=5.0, fixed_overlap=5)
    base.update(overrides)
    return TimingConfig(**base)


def build_sim(task, method="streaming_diloco", *, period=100, num_fragments=4,
              timing=None, seed=1, **protocol_kwargs):
    protocol = ProtocolConfig(
        method,
        period=period,
        num_fragments=1 if method == "diloco" else num_fragments,
        **protocol_kwargs,
    )
    return Simulation(task, protocol, timing=timing or fixed_timing(), seed=seed)


def workers_identical(sim) -> bool:
    ref = sim.workers[0].params
    return all(np.array_equal(w.params, ref) for w in sim.workers[1:])
