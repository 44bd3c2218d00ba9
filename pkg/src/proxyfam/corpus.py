"""Corpus manifest, DEX-hash grouping, fold planning, and the feature cache.

Manifest format (UTF-8, tab-separated, one sample per line):

    #labels <l1,l2,...>
    <id> <family> <cfg-path|-> <fcg-path|-> <dex,...|-> <capa,...|-> <strings-path|->

``-`` marks an absent field. ``family`` may also be ``-`` for unlabeled
samples fed to batch prediction; such samples are rejected by training and
evaluation. Relative paths resolve against the manifest's directory.

Samples sharing any DEX hash are transitively merged into one group
(union-find over the sample <-> hash bipartite graph); grouped K-fold
assignment then keeps each group inside a single fold so no DEX artifact
straddles a train/test boundary.
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ManifestError, ModelFormatError
from .wl import FeatureVector

logger = logging.getLogger(__name__)

NON_PROXY_LABEL = "non_proxy"

_DEX_RE = re.compile(r"^[0-9a-f]{64}$")
_FIELD_SEP = "\t"

CACHE_MAGIC = b"PFWLFC01"
CACHE_VERSION = 1


@dataclass(frozen=True)
class Sample:
    """One application: identity, label, graph locations, artifacts."""

    id: str
    family: str | None
    cfg_path: Path | None
    fcg_path: Path | None
    dex_hashes: frozenset[str]
    capa_rules: frozenset[str] | None
    strings_path: Path | None


@dataclass(frozen=True)
class Corpus:
    labels: tuple[str, ...]
    samples: tuple[Sample, ...]
    manifest_path: Path | None = None

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def family_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.samples:
            if s.family is not None:
                counts[s.family] = counts.get(s.family, 0) + 1
        return counts


def _parse_field(raw: str) -> str | None:
    return None if raw == "-" else raw


def load_corpus(manifest_path: Path | str) -> Corpus:
    """Parse and validate a manifest; errors name the offending line."""
    manifest_path = Path(manifest_path)
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    labels: tuple[str, ...] | None = None
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#labels"):
            if labels is not None:
                raise ManifestError(f"line {lineno}: duplicate #labels header")
            decl = line[len("#labels") :].strip()
            labels = tuple(x.strip() for x in decl.split(",") if x.strip())
            if not labels:
                raise ManifestError(f"line {lineno}: empty label set")
            continue
        if line.startswith("#"):
            continue
        if labels is None:
            raise ManifestError(f"line {lineno}: sample before #labels header")
        parts = line.split(_FIELD_SEP)
        if len(parts) != 7:
            raise ManifestError(
                f"line {lineno}: expected 7 tab-separated fields, got {len(parts)}"
            )
        sid, family_raw, cfg_raw, fcg_raw, dex_raw, capa_raw, strings_raw = parts
        if not sid:
            raise ManifestError(f"line {lineno}: empty sample id")
        if sid in seen_ids:
            raise ManifestError(f"line {lineno}: duplicate sample id {sid!r}")
        seen_ids.add(sid)
        family = _parse_field(family_raw)
        if family is not None and family not in labels:
            raise ManifestError(
                f"line {lineno}: family {family!r} not in declared labels"
            )
        dex: frozenset[str] = frozenset()
        if _parse_field(dex_raw) is not None:
            hashes = [h.strip() for h in dex_raw.split(",")]
            for h in hashes:
                if not _DEX_RE.match(h):
                    raise ManifestError(
                        f"line {lineno}: bad DEX hash {h!r} (need lowercase 64-hex)"
                    )
            dex = frozenset(hashes)
        capa: frozenset[str] | None = None
        if _parse_field(capa_raw) is not None:
            capa = frozenset(r.strip() for r in capa_raw.split(",") if r.strip())
        samples.append(
            Sample(
                id=sid,
                family=family,
                cfg_path=(base / cfg_raw) if _parse_field(cfg_raw) else None,
                fcg_path=(base / fcg_raw) if _parse_field(fcg_raw) else None,
                dex_hashes=dex,
                capa_rules=capa,
                strings_path=(base / strings_raw) if _parse_field(strings_raw) else None,
            )
        )
    if labels is None:
        raise ManifestError("manifest has no #labels header")
    return Corpus(labels=labels, samples=tuple(samples), manifest_path=manifest_path)


def read_strings(path: Path | str) -> frozenset[str]:
    """String set for a sample: one string per line."""
    text = Path(path).read_text(encoding="utf-8")
    return frozenset(ln for ln in text.splitlines() if ln)


# --- capability-vector fusion ----------------------------------------------


def build_capa_vocabulary(samples: Iterable[Sample]) -> tuple[str, ...]:
    """Sorted union of all capa rule names seen in the corpus."""
    rules: set[str] = set()
    for s in samples:
        if s.capa_rules:
            rules.update(s.capa_rules)
    return tuple(sorted(rules))


def fuse_capa(
    wl: FeatureVector,
    capa_rules: frozenset[str] | None,
    vocab: Sequence[str],
) -> FeatureVector:
    """Append a binary capability block; absent rules give an all-zero block.

    Rules outside the vocabulary are ignored.
    """
    block = np.zeros(len(vocab), dtype=np.float64)
    if capa_rules:
        pos = {r: i for i, r in enumerate(vocab)}
        for r in capa_rules:
            i = pos.get(r)
            if i is not None:
                block[i] = 1.0
    values = np.concatenate([wl.values, block])
    layout = wl.layout + (("capa", len(wl), len(vocab)),)
    return FeatureVector(values, layout)


# --- DEX grouping and fold planning -----------------------------------------


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        root = self.parent.setdefault(x, x)
        if root != x:
            root = self.find(root)
            self.parent[x] = root
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def group_by_dex(samples: Sequence[Sample]) -> dict[str, str]:
    """Map sample id -> group id via transitive DEX-hash sharing.

    Group ids are canonicalized as the lexicographically smallest member
    sample id, so the result is independent of input order. Samples with no
    DEX hashes form singletons.
    """
    uf = _UnionFind()
    for s in samples:
        uf.find(s.id)
        for h in s.dex_hashes:
            uf.union(s.id, f"dex:{h}")
    members: dict[str, list[str]] = {}
    for s in samples:
        members.setdefault(uf.find(s.id), []).append(s.id)
    out: dict[str, str] = {}
    for ids in members.values():
        gid = min(ids)
        for sid in ids:
            out[sid] = gid
    return out


@dataclass(frozen=True)
class FoldPlan:
    """Groups pinned to folds; every sample inherits its group's fold."""

    k: int
    group_of: dict[str, str]
    fold_of: dict[str, int]

    def fold_of_sample(self, sample_id: str) -> int:
        return self.fold_of[self.group_of[sample_id]]

    def test_ids(self, fold: int) -> list[str]:
        return [s for s in self.group_of if self.fold_of_sample(s) == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [s for s in self.group_of if self.fold_of_sample(s) != fold]


def plan_folds(groups: Mapping[str, str], k: int, seed: int = 0) -> FoldPlan:
    """Assign groups to k folds, balancing fold sizes.

    Groups are taken largest first (ties by group id) and dropped into the
    currently smallest fold (ties to the lowest fold index). The rule is
    fully deterministic; ``seed`` is accepted for interface symmetry with
    the other planning stages but does not influence the assignment.
    """
    del seed
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    sizes: dict[str, int] = {}
    for gid in groups.values():
        sizes[gid] = sizes.get(gid, 0) + 1
    if len(sizes) < k:
        raise DataError(f"cannot make {k} folds from {len(sizes)} DEX groups")
    order = sorted(sizes, key=lambda g: (-sizes[g], g))
    fold_sizes = [0] * k
    fold_of: dict[str, int] = {}
    for gid in order:
        target = min(range(k), key=lambda f: (fold_sizes[f], f))
        fold_of[gid] = target
        fold_sizes[target] += sizes[gid]
    return FoldPlan(k=k, group_of=dict(groups), fold_of=fold_of)


def leakage_violations(
    samples: Sequence[Sample], plan: FoldPlan
) -> list[tuple[int, str]]:
    """DEX hashes that appear on both sides of a fold's train/test split."""
    hashes_by_fold: dict[int, set[str]] = {f: set() for f in range(plan.k)}
    for s in samples:
        hashes_by_fold[plan.fold_of_sample(s.id)].update(s.dex_hashes)
    violations: list[tuple[int, str]] = []
    for fold in range(plan.k):
        test_hashes = hashes_by_fold[fold]
        train_hashes: set[str] = set()
        for other in range(plan.k):
            if other != fold:
                train_hashes.update(hashes_by_fold[other])
        for h in sorted(test_hashes & train_hashes):
            violations.append((fold, h))
    return violations


# --- class balancing ---------------------------------------------------------


def upsample_training(
    samples: Sequence[Sample],
    classes: Sequence[str],
    seed: int,
) -> list[str]:
    """Resample minority classes with replacement up to the majority count.

    Returns the training multiset as a list of sample ids: the original ids
    in input order followed by the seeded duplicates, grouped by class in
    sorted class order. The majority class is untouched.
    """
    by_class: dict[str, list[str]] = {c: [] for c in classes}
    for s in samples:
        if s.family in by_class:
            by_class[s.family].append(s.id)
    for c in classes:
        if not by_class[c]:
            raise DataError(f"class {c!r} absent from training partition")
    majority = max(len(ids) for ids in by_class.values())
    out = [s.id for s in samples if s.family in by_class]
    for ci, c in enumerate(sorted(classes)):
        ids = sorted(by_class[c])
        deficit = majority - len(by_class[c])
        if deficit > 0:
            rng = np.random.default_rng([seed, ci])
            picks = rng.integers(0, len(ids), size=deficit)
            out.extend(ids[int(p)] for p in picks)
    return out


# --- feature cache -----------------------------------------------------------


@dataclass(frozen=True)
class FeatureSet:
    """Per-sample feature vectors sharing one layout, in manifest order."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    layout: tuple[tuple[str, int, int], ...]

    def __post_init__(self) -> None:
        if self.matrix.shape[0] != len(self.ids):
            raise ValueError("row count does not match id count")

    def vector(self, sample_id: str) -> np.ndarray:
        return self.matrix[self.ids.index(sample_id)]

    def index_of(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


def _pack_str(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    if off + 2 > len(buf):
        raise ModelFormatError("truncated string field")
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    if off + n > len(buf):
        raise ModelFormatError("truncated string field")
    return buf[off : off + n].decode("utf-8"), off + n


def pack_layout(layout: Sequence[tuple[str, int, int]]) -> bytes:
    out = struct.pack("<I", len(layout))
    for name, offset, length in layout:
        out += _pack_str(name) + struct.pack("<II", offset, length)
    return out


def unpack_layout(buf: bytes, off: int) -> tuple[tuple[tuple[str, int, int], ...], int]:
    if off + 4 > len(buf):
        raise ModelFormatError("truncated layout")
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    blocks = []
    for _ in range(n):
        name, off = _unpack_str(buf, off)
        if off + 8 > len(buf):
            raise ModelFormatError("truncated layout")
        offset, length = struct.unpack_from("<II", buf, off)
        off += 8
        blocks.append((name, offset, length))
    return tuple(blocks), off


def write_feature_cache(path: Path | str, features: FeatureSet) -> None:
    """Binary cache: magic, version, dim, layout, then id + f64-LE rows."""
    buf = bytearray()
    buf += CACHE_MAGIC
    buf += struct.pack("<II", CACHE_VERSION, features.dim)
    buf += pack_layout(features.layout)
    buf += struct.pack("<I", len(features.ids))
    matrix = np.ascontiguousarray(features.matrix, dtype="<f8")
    for i, sid in enumerate(features.ids):
        buf += _pack_str(sid)
        buf += matrix[i].tobytes()
    Path(path).write_bytes(bytes(buf))


def read_feature_cache(path: Path | str) -> FeatureSet:
    buf = Path(path).read_bytes()
    if buf[:8] != CACHE_MAGIC:
        raise ModelFormatError(f"not a feature cache: {path}")
    off = 8
    if off + 8 > len(buf):
        raise ModelFormatError("truncated cache header")
    version, dim = struct.unpack_from("<II", buf, off)
    off += 8
    if version != CACHE_VERSION:
        raise ModelFormatError(f"unsupported cache version {version}")
    layout, off = unpack_layout(buf, off)
    if off + 4 > len(buf):
        raise ModelFormatError("truncated cache header")
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    ids = []
    rows = np.empty((count, dim), dtype=np.float64)
    row_bytes = dim * 8
    for i in range(count):
        sid, off = _unpack_str(buf, off)
        if off + row_bytes > len(buf):
            raise ModelFormatError("truncated cache payload")
        rows[i] = np.frombuffer(buf, dtype="<f8", count=dim, offset=off)
        off += row_bytes
        ids.append(sid)
    if off != len(buf):
        raise ModelFormatError("trailing bytes in feature cache")
    return FeatureSet(ids=tuple(ids), matrix=rows, layout=layout)
