"""Strided fragmentation of a layered parameter vector.

A 12-layer model is split into 4 fragments the way depth-wise streaming
synchronization expects: layer i goes to fragment i % 4, so each fragment
holds every 4th layer and all fragments stay roughly the same size.
"""

import numpy as np

from fragsync import fragment_views, gather, partition, scatter

layer_sizes = [40, 40, 40, 40, 40, 40, 40, 40, 40, 40, 40, 40]
spec = partition(layer_sizes, num_fragments=4)

print(f"{spec.num_layers} layers, {spec.total_params} parameters, "
      f"{spec.num_fragments} fragments, {spec.layers_per_shard} layers per shard")
for p in range(spec.num_fragments):
    print(f"  fragment {p}: layers {spec.layers_of(p)}")

views = fragment_views(spec, bytes_per_element=4)
print("\nfragment byte sizes on the wire:", [v.byte_size for v in views])

# Fragments address the flat vector; gather/scatter round-trip exactly.
rng = np.random.default_rng(0)
params = rng.standard_normal(spec.total_params)
rebuilt = np.zeros_like(params)
for view in views:
    rebuilt = scatter(rebuilt, view, gather(params, view))
print("reassembling all fragments reproduces the vector:", np.array_equal(rebuilt, params))

# Uneven layer counts still partition cleanly: 10 layers over 4 fragments.
spec10 = partition([100] * 10, 4)
print("\n10 layers over 4 fragments:",
      [spec10.layers_of(p) for p in range(4)])
