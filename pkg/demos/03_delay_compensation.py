"""Anatomy of delay-compensated sync completion on a single fragment.

While a fragment's all-reduce is in flight the workers keep training, so the
arriving global state is stale by the overlap depth. The compensated
completion replays the worker's own displacement on top of the freshly
updated global state, plus a small curvature-scaled correction, instead of
blending the stale state into the live parameters.
"""

import numpy as np

from fragsync import (
    AdamWState,
    CompensationSnapshot,
    GlobalShardState,
    InFlightSync,
    NesterovState,
    WorkerState,
)
from fragsync.params import FragmentView
from fragsync.protocol import aggregate, complete_sync_baseline, delay_compensate

OVERLAP = 5
PERIOD = 100


def fresh_worker(current, snapshot):
    w = WorkerState(0, np.asarray(current, float).copy(), AdamWState.fresh(len(current)))
    w.snapshots[0] = CompensationSnapshot(0, 100, np.asarray(snapshot, float).copy())
    return w


snapshot = np.array([1.00, -0.50, 0.20])   # fragment when the sync started
current = np.array([0.80, -0.42, 0.26])    # fragment 5 steps later
old_global = np.array([1.05, -0.55, 0.18])
delta = np.array([0.08, 0.04, -0.02])      # aggregated pseudo-gradient

view = FragmentView(0, np.arange(3), 4)

print("snapshot (at initiation):", snapshot)
print("current  (at completion):", current)
print("worker displacement over the overlap:", current - snapshot)

for strength in (0.0, 0.5, 2.0):
    w = fresh_worker(current, snapshot)
    g = GlobalShardState([old_global.copy()],
                         [NesterovState(np.zeros(3), outer_lr=1.0, momentum=0.0)], [0])
    sync = InFlightSync(0, 100, 100 + OVERLAP, [delta.copy()])
    aggregate(sync, 1)
    delay_compensate([w], sync, g, strength=strength, period=PERIOD, view=view)
    print(f"compensated fragment, strength {strength:>3.1f}:", np.round(w.params, 6))

# The blending baseline pulls the live fragment halfway toward the stale
# global state instead, discarding half the local progress.
w = WorkerState(0, current.copy(), AdamWState.fresh(3))
g = GlobalShardState([old_global.copy()],
                     [NesterovState(np.zeros(3), outer_lr=1.0, momentum=0.0)], [0])
sync = InFlightSync(0, 100, 100 + OVERLAP, [delta.copy()])
aggregate(sync, 1)
complete_sync_baseline([w], sync, g, mixing=0.5, view=view)
print("blended fragment (mixing 0.5):   ", np.round(w.params, 6))
