"""WAN timing model: ring all-reduce cost and the overlap depth it implies.

Sweeps fragment size and link characteristics, then shows how a sync duration
turns into a step-denominated overlap depth, and how the moving-average
estimator tracks noisy observations.
"""

from fragsync import LinkModel, NetworkTimings, allreduce_time, observe, overlap_depth

# A 4-worker ring with 50 ms per-hop latency and 1 Gbit/s of usable bandwidth.
link = LinkModel(latency=0.05, bandwidth=125e6, num_workers=4)

print("fragment size -> ring all-reduce seconds (4 workers, 50ms hops, 1Gb/s)")
for mb in (1, 10, 40, 150, 600):
    seconds = allreduce_time(link, mb * 1e6)
    print(f"  {mb:>4d} MB: {seconds:7.3f} s")

# Latency dominates small fragments: the zero-payload floor is 2(M-1)L.
print(f"\nzero-payload latency floor: {allreduce_time(link, 0):.3f} s")

# Overlap depth: how many local steps elapse while a sync is in flight.
timings = NetworkTimings(t_compute=1.0, t_sync=5.0)
print("\nsync seconds -> overlap depth at 1 s/step:")
for seconds in (0.2, 1.0, 5.0, 12.5):
    print(f"  {seconds:5.1f} s -> {overlap_depth(timings, seconds)} steps")

# Online estimation: EMA with decay 0.3 converging onto a noisy duration.
t = NetworkTimings(ema_decay=0.3)
for obs in (4.0, 6.0, 5.5, 4.5, 5.0, 5.2):
    t = observe(t, "sync", obs)
    print(f"observed {obs:.1f} s, estimate now {t.t_sync:.3f} s")
