"""Direction-aware Weisfeiler-Lehman features with signed hash projection.

Each node starts from the hash of its string label. A refinement step
rehashes every node from the triple (own label, sorted multiset of
predecessor labels, sorted multiset of successor labels), keeping callers
distinct from callees. At every iteration 0..H each node drops a +1 or -1
into one of d buckets chosen by its current label hash, so colliding labels
tend to cancel instead of piling up. The result is a fixed-length count
vector per graph; a sample's feature vector concatenates one block per graph
type.

The label hash is 64-bit FNV-1a over a canonical byte serialization
(own-hash bytes || sorted predecessor hashes || separator || sorted
successor hashes, each hash as 8 big-endian bytes), pinned so vectors are
bit-identical across runs, platforms, and kernel backends.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .backends import get_kernels
from .backends.np_kernels import SECTION_SEPARATOR
from .graphs import GraphKind, LabeledDigraph

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
_U64 = (1 << 64) - 1

CFG_BLOCK = "cfg_wl"
FCG_BLOCK = "fcg_wl"
CAPA_BLOCK = "capa"

BLOCK_OF_KIND = {GraphKind.CFG: CFG_BLOCK, GraphKind.FCG: FCG_BLOCK}


def stable_hash(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _U64
    return h


def signed_hash(label_hash: int, dim: int) -> tuple[int, int]:
    """Project a 64-bit label hash to (bucket index, sign).

    Index is the hash mod dim; sign is +1 when bit 63 is clear, -1 when set.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    sign = 1 if (label_hash >> 63) & 1 == 0 else -1
    return label_hash % dim, sign


def refine_hash(own: int, preds: Iterable[int], succs: Iterable[int]) -> int:
    """Reference refinement hash over a (own, predecessors, successors) triple.

    Neighbor multisets are sorted numerically; the kernel backends implement
    exactly this serialization.
    """
    buf = bytearray(own.to_bytes(8, "big"))
    for p in sorted(preds):
        buf += p.to_bytes(8, "big")
    buf.append(SECTION_SEPARATOR)
    for s in sorted(succs):
        buf += s.to_bytes(8, "big")
    return stable_hash(bytes(buf))


@dataclass(frozen=True)
class WlConfig:
    """Iteration count and per-graph-type bucket count.

    The default dim of 512 gives a 1024-long concatenated CFG+FCG vector.
    """

    iterations: int = 2
    dim: int = 512

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Dense real vector with a declared block layout.

    Layout entries are (block-name, offset, length); blocks are contiguous,
    non-overlapping, and cover the whole vector.
    """

    values: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        layout = tuple((str(n), int(o), int(l)) for n, o, l in self.layout)
        object.__setattr__(self, "layout", layout)
        expected = 0
        names = set()
        for name, offset, length in layout:
            if offset != expected or length < 0:
                raise ValueError(f"layout block {name!r} is not contiguous")
            if name in names:
                raise ValueError(f"duplicate layout block {name!r}")
            names.add(name)
            expected = offset + length
        if expected != values.shape[0]:
            raise ValueError(
                f"layout covers {expected} entries, vector has {values.shape[0]}"
            )

    def block(self, name: str) -> np.ndarray:
        for n, offset, length in self.layout:
            if n == name:
                return self.values[offset : offset + length]
        raise KeyError(name)

    def block_names(self) -> tuple[str, ...]:
        return tuple(n for n, _, _ in self.layout)

    def __len__(self) -> int:
        return int(self.values.shape[0])


def hash_labels(labels: Sequence[str]) -> np.ndarray:
    """FNV-1a hash of each label's UTF-8 bytes, memoized per call."""
    cache: dict[str, int] = {}
    out = np.empty(len(labels), dtype=np.uint64)
    for k, label in enumerate(labels):
        h = cache.get(label)
        if h is None:
            h = stable_hash(label.encode("utf-8"))
            cache[label] = h
        out[k] = h
    return out


def graph_arrays(
    g: LabeledDigraph,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(labels0, pred_indptr, pred_idx, succ_indptr, succ_idx) in CSR form."""
    n = len(g.nodes)
    labels0 = hash_labels(g.labels)
    index = g.node_index
    if g.edges:
        src = np.fromiter((index[s] for s, _ in g.edges), dtype=np.int64)
        dst = np.fromiter((index[d] for _, d in g.edges), dtype=np.int64)
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
    succ_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=succ_indptr[1:])
    succ_idx = dst[np.argsort(src, kind="stable")]
    pred_indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n), out=pred_indptr[1:])
    pred_idx = src[np.argsort(dst, kind="stable")]
    return labels0, pred_indptr, pred_idx, succ_indptr, succ_idx


def wl_label_chain(g: LabeledDigraph, iterations: int) -> np.ndarray:
    """Per-iteration node labels, shape (iterations + 1, |V|), uint64."""
    labels0, pi, px, si, sx = graph_arrays(g)
    return get_kernels().wl_label_chain(labels0, pi, px, si, sx, iterations)


def _project_chain(chain: np.ndarray, dim: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    if chain.size == 0:
        return vec
    idx = (chain % np.uint64(dim)).astype(np.int64).ravel()
    signs = np.where((chain >> np.uint64(63)) == 0, 1.0, -1.0).ravel()
    np.add.at(vec, idx, signs)
    return vec


def wl_vector(g: LabeledDigraph, config: WlConfig) -> FeatureVector:
    """Signed-hash WL vector of one graph, a single named block.

    Every node contributes one +/-1 bucket update at every iteration 0..H,
    so the L1 norm is at most |V| * (H + 1). An empty graph yields zeros.
    """
    chain = wl_label_chain(g, config.iterations)
    vec = _project_chain(chain, config.dim)
    block = BLOCK_OF_KIND[g.kind]
    return FeatureVector(vec, ((block, 0, config.dim),))


def wl_explicit_multisets(g: LabeledDigraph, iterations: int) -> list[Counter]:
    """Un-projected WL representation: one label multiset per iteration.

    Refinement is identical to wl_vector; this is the collision-free view
    used as an oracle when testing the hashed projection.
    """
    chain = wl_label_chain(g, iterations)
    return [Counter(int(x) for x in row) for row in chain]


def extract_features(
    cfg_graph: LabeledDigraph | None,
    fcg_graph: LabeledDigraph | None,
    config: WlConfig,
) -> FeatureVector:
    """Concatenated [cfg_wl | fcg_wl] vector; a missing graph is a zero block."""
    d = config.dim
    blocks = []
    for g, kind in ((cfg_graph, GraphKind.CFG), (fcg_graph, GraphKind.FCG)):
        if g is None:
            blocks.append(np.zeros(d, dtype=np.float64))
        else:
            if g.kind is not kind:
                raise ValueError(f"expected {kind.value} graph, got {g.kind.value}")
            blocks.append(wl_vector(g, config).values)
    values = np.concatenate(blocks)
    layout = ((CFG_BLOCK, 0, d), (FCG_BLOCK, d, d))
    return FeatureVector(values, layout)


def wl_layout(dim: int) -> tuple[tuple[str, int, int], ...]:
    return ((CFG_BLOCK, 0, dim), (FCG_BLOCK, dim, dim))
