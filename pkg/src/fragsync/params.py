"""Flat parameter vectors and layer-granular strided fragmentation.

A model is stored as one flat float64 vector. Layer boundaries are recorded
in a :class:`FragmentationSpec`, which assigns whole layers to fragments in a
strided pattern (layer ``i`` goes to fragment ``i % num_fragments``). Each
fragment is addressed through a :class:`FragmentView`, an index set into the
flat vector -- fragments are views, never copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InternalError


def param_vector(values) -> np.ndarray:
    """Materialize a float64 parameter vector, rejecting non-finite entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    if not np.all(np.isfinite(v)):
        raise InternalError("parameter vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class FragmentationSpec:
    """Partition of a layered flat vector into disjoint strided fragments."""

    layer_sizes: tuple[int, ...]
    num_fragments: int
    assignment: tuple[int, ...]  # layer index -> fragment index (i % num_fragments)

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes)

    @property
    def total_params(self) -> int:
        return sum(self.layer_sizes)

    @property
    def layers_per_shard(self) -> int:
        """Largest number of layers assigned to any single fragment."""
        return -(-self.num_layers // self.num_fragments)

    def layers_of(self, fragment: int) -> list[int]:
        return [i for i, f in enumerate(self.assignment) if f == fragment]


@dataclass(eq=False)
class FragmentView:
    """Index set addressing one fragment inside a flat parameter vector."""

    index: int
    param_indices: np.ndarray  # strictly increasing, int64
    byte_size: int

    def __post_init__(self):
        idx = np.asarray(self.param_indices, dtype=np.int64)
        if idx.size == 0:
            raise InternalError(f"fragment {self.index} is empty")
        if np.any(np.diff(idx) <= 0) or idx[0] < 0:
            raise InternalError(f"fragment {self.index} indices not strictly increasing")
        self.param_indices = idx

    @property
    def size(self) -> int:
        return int(self.param_indices.size)


def partition(layer_sizes: Sequence[int], num_fragments: int) -> FragmentationSpec:
    """Assign layers to fragments in a strided pattern: layer i -> fragment i % K."""
    sizes = tuple(int(s) for s in layer_sizes)
    if num_fragments <= 0:
        raise ConfigError(f"num_fragments: must be positive, got {num_fragments}")
    if num_fragments > len(sizes):
        raise ConfigError(
            f"num_fragments: {num_fragments} exceeds number of layers {len(sizes)}"
        )
    if any(s < 1 for s in sizes):
        raise ConfigError(f"layer_sizes: all layers must have >= 1 parameter, got {sizes}")
    assignment = tuple(i % num_fragments for i in range(len(sizes)))
    return FragmentationSpec(sizes, num_fragments, assignment)


def fragment_views(spec: FragmentationSpec, bytes_per_element: int = 4) -> list[FragmentView]:
    """Build the index view for every fragment of a partition.

    ``bytes_per_element`` sets the wire size of one transmitted value; it only
    feeds the timing model, not the arithmetic.
    """
    offsets = np.concatenate([[0], np.cumsum(spec.layer_sizes)])
    views = []
    for p in range(spec.num_fragments):
        pieces = [
            np.arange(offsets[i], offsets[i + 1], dtype=np.int64)
            for i in spec.layers_of(p)
        ]
        indices = np.concatenate(pieces)
        views.append(FragmentView(p, indices, int(indices.size) * bytes_per_element))
    return views


def gather(v: np.ndarray, view: FragmentView) -> np.ndarray:
    """Extract the sub-vector of ``v`` at the view's indices (copy)."""
    if view.param_indices[-1] >= v.shape[0]:
        raise InternalError(
            f"fragment {view.index} addresses index {view.param_indices[-1]} "
            f"in a vector of length {v.shape[0]}"
        )
    return v[view.param_indices]


def scatter(v: np.ndarray, view: FragmentView, sub: np.ndarray) -> np.ndarray:
    """Return a copy of ``v`` with the view's entries replaced by ``sub``."""
    if sub.shape[0] != view.param_indices.shape[0]:
        raise InternalError(
            f"fragment {view.index}: sub-vector length {sub.shape[0]} != "
            f"view size {view.param_indices.shape[0]}"
        )
    out = v.copy()
    out[view.param_indices] = sub
    return out
