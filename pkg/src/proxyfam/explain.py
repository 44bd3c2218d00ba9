"""Feature attribution and WL hash-bucket reverse-mapping.

For a linear model under feature independence, the Shapley value of feature
j for class c has the closed form w_cj * (x_j - mean_j) against the corpus
mean baseline, and attributions sum exactly to the score difference between
the sample and the baseline (completeness).

A bucket map makes WL feature indices legible: scanning every graph records,
for each (block, bucket), which node labels (iteration 0) and which
one-level-expanded neighborhood triples (iterations >= 1) landed there, with
per-family occurrence counts. Each witness carries enough of the original
hash material to re-derive its bucket, so the map is verifiable.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .classifier import LinearModel, decision_scores
from .corpus import Sample
from .errors import DataError
from .graphs import LabeledDigraph
from .wl import (
    BLOCK_OF_KIND,
    WlConfig,
    graph_arrays,
    refine_hash,
    signed_hash,
    stable_hash,
    wl_label_chain,
)


@dataclass(frozen=True)
class Attribution:
    """Per-class, per-feature contributions for one sample."""

    sample_id: str
    classes: tuple[str, ...]
    phi: np.ndarray  # (n_classes, dim)
    baseline: np.ndarray  # (dim,)


def linear_shap(model: LinearModel, x: np.ndarray, sample_id: str = "") -> Attribution:
    """Exact per-class Shapley values of a linear model vs the corpus mean."""
    if model.feature_means is None or model.feature_means.shape != (model.dim,):
        raise DataError("model carries no per-feature means")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DataError(f"input has shape {x.shape}, model expects ({model.dim},)")
    norm = np.linalg.norm(x)
    xn = x / norm if norm > 0 else x
    phi = model.weights * (xn - model.feature_means)[None, :]
    return Attribution(
        sample_id=sample_id,
        classes=model.classes,
        phi=phi,
        baseline=model.feature_means.copy(),
    )


def completeness_gap(model: LinearModel, attribution: Attribution, x: np.ndarray) -> float:
    """Largest relative violation of sum(phi) == f(x) - f(baseline)."""
    scores_x = decision_scores(model, np.asarray(x, dtype=np.float64))
    scores_base = decision_scores(model, attribution.baseline, normalize=False)
    worst = 0.0
    for ci in range(len(model.classes)):
        total = float(attribution.phi[ci].sum())
        expected = float(scores_x[ci] - scores_base[ci])
        denom = max(abs(expected), 1e-12)
        worst = max(worst, abs(total - expected) / denom)
    return worst


def feature_names(
    layout: Sequence[tuple[str, int, int]], capa_vocab: Sequence[str] = ()
) -> list[str]:
    """Flat feature names: ``cfg_wl_17`` style for WL blocks, rule names for capa."""
    names: list[str] = []
    for block, offset, length in layout:
        if block == "capa":
            if len(capa_vocab) != length:
                raise DataError(
                    f"capa block length {length} != vocabulary size {len(capa_vocab)}"
                )
            names.extend(capa_vocab)
        else:
            names.extend(f"{block}_{i}" for i in range(length))
    return names


def global_importance(
    attributions: Sequence[Attribution],
    layout: Sequence[tuple[str, int, int]],
    capa_vocab: Sequence[str] = (),
) -> list[tuple[str, float]]:
    """Features ranked by mean |phi| over samples and classes.

    Attributions are aggregated in sample-id order, so the ranking does not
    depend on the order samples were explained in.
    """
    if not attributions:
        raise DataError("need at least one attribution")
    ordered = sorted(attributions, key=lambda a: a.sample_id)
    stacked = np.concatenate([np.abs(a.phi) for a in ordered], axis=0)
    mean_abs = stacked.mean(axis=0)
    names = feature_names(layout, capa_vocab)
    order = sorted(range(len(names)), key=lambda i: (-mean_abs[i], i))
    return [(names[i], float(mean_abs[i])) for i in order]


@dataclass
class Witness:
    """One label or expanded subtree pattern observed to land in a bucket."""

    iteration: int
    label_hash: int
    pattern: str
    label: str | None = None  # iteration-0 node label
    own: int | None = None  # iteration >= 1: previous-level triple
    preds: tuple[int, ...] = ()
    succs: tuple[int, ...] = ()
    family_counts: Counter = field(default_factory=Counter)

    def rehash(self) -> int:
        if self.iteration == 0:
            assert self.label is not None
            return stable_hash(self.label.encode("utf-8"))
        assert self.own is not None
        return refine_hash(self.own, self.preds, self.succs)


@dataclass
class BucketMap:
    dim: int
    iterations: int
    entries: dict[tuple[str, int], list[Witness]]

    def witnesses(self, block: str, bucket: int) -> list[Witness]:
        return self.entries.get((block, bucket), [])


def _display(h: int, level: int, names: dict[int, str]) -> str:
    if level == 0:
        return names.get(h, f"{h:016x}")
    return f"{h:016x}"


def build_bucket_map(
    graphs: Iterable[tuple[str, str | None, LabeledDigraph]],
    config: WlConfig,
) -> BucketMap:
    """Scan (sample_id, family, graph) triples into a verifiable bucket map.

    Witnesses are deduplicated on (iteration, label hash); family counts
    accumulate node occurrences. Output ordering is deterministic.
    """
    entries: dict[tuple[str, int], dict[tuple[int, int], Witness]] = {}
    for _sample_id, family, g in graphs:
        block = BLOCK_OF_KIND[g.kind]
        chain = wl_label_chain(g, config.iterations)
        labels0, pi, px, si, sx = graph_arrays(g)
        hash_to_label = {int(h): lbl for h, lbl in zip(labels0, g.labels)}
        fam = family if family is not None else "?"
        for h in range(config.iterations + 1):
            row = chain[h]
            prev = chain[h - 1] if h > 0 else None
            for v in range(len(g.nodes)):
                label_hash = int(row[v])
                bucket, _sign = signed_hash(label_hash, config.dim)
                slot = entries.setdefault((block, bucket), {})
                key = (h, label_hash)
                witness = slot.get(key)
                if witness is None:
                    if h == 0:
                        label = g.labels[v]
                        witness = Witness(
                            iteration=0,
                            label_hash=label_hash,
                            pattern=label,
                            label=label,
                        )
                    else:
                        own = int(prev[v])
                        preds = tuple(
                            sorted(int(prev[j]) for j in px[pi[v] : pi[v + 1]])
                        )
                        succs = tuple(
                            sorted(int(prev[j]) for j in sx[si[v] : si[v + 1]])
                        )
                        level = h - 1
                        pattern = (
                            f"{_display(own, level, hash_to_label)}"
                            f" <- [{','.join(_display(p, level, hash_to_label) for p in preds)}]"
                            f" -> [{','.join(_display(s, level, hash_to_label) for s in succs)}]"
                        )
                        witness = Witness(
                            iteration=h,
                            label_hash=label_hash,
                            pattern=pattern,
                            own=own,
                            preds=preds,
                            succs=succs,
                        )
                    slot[key] = witness
                witness.family_counts[fam] += 1
    final: dict[tuple[str, int], list[Witness]] = {}
    for key in sorted(entries):
        final[key] = [
            entries[key][k] for k in sorted(entries[key], key=lambda k: (k[0], k[1]))
        ]
    return BucketMap(dim=config.dim, iterations=config.iterations, entries=final)


def verify_bucket_map(bucket_map: BucketMap) -> list[tuple[str, int, str]]:
    """Witnesses whose re-hash does not land in their claimed bucket."""
    bad = []
    for (block, bucket), witnesses in bucket_map.entries.items():
        for w in witnesses:
            rehashed = w.rehash()
            if rehashed != w.label_hash or signed_hash(rehashed, bucket_map.dim)[0] != bucket:
                bad.append((block, bucket, w.pattern))
    return bad


def serialize_bucket_map(bucket_map: BucketMap) -> str:
    """Sorted text form, one witness per line, stable for diffing."""
    lines = [f"# dim={bucket_map.dim} iterations={bucket_map.iterations}"]
    for (block, bucket), witnesses in bucket_map.entries.items():
        for w in witnesses:
            fams = ",".join(f"{f}:{c}" for f, c in sorted(w.family_counts.items()))
            lines.append(
                f"{block}\t{bucket}\titer{w.iteration}\t{w.label_hash:016x}\t{fams}\t{w.pattern}"
            )
    return "\n".join(lines) + "\n"


_WL_BLOCKS = ("cfg_wl", "fcg_wl")


def parse_feature_name(name: str) -> tuple[str, int] | None:
    """Split ``cfg_wl_123`` into (block, bucket); None for non-WL names."""
    for block in _WL_BLOCKS:
        prefix = block + "_"
        if name.startswith(prefix):
            suffix = name[len(prefix) :]
            if suffix.isdigit():
                return block, int(suffix)
    return None


@dataclass(frozen=True)
class FeatureReport:
    feature: str
    kind: str  # "wl" or "capa"
    witnesses: tuple[Witness, ...] = ()
    family_counts: tuple[tuple[str, int], ...] = ()
    empty: bool = False

    def text(self) -> str:
        lines = [f"feature {self.feature} ({self.kind})"]
        if self.kind == "capa":
            for fam, count in self.family_counts:
                lines.append(f"  {fam}: {count}")
            return "\n".join(lines) + "\n"
        if self.empty:
            lines.append("  (no witnesses observed in the corpus)")
            return "\n".join(lines) + "\n"
        by_iter: dict[int, list[Witness]] = {}
        for w in self.witnesses:
            by_iter.setdefault(w.iteration, []).append(w)
        for it in sorted(by_iter):
            lines.append(f"  iteration {it}:")
            for w in by_iter[it]:
                fams = ", ".join(f"{f}:{c}" for f, c in sorted(w.family_counts.items()))
                lines.append(f"    {w.pattern}  [{fams}]")
        return "\n".join(lines) + "\n"


def explain_feature(
    name: str,
    bucket_map: BucketMap,
    samples: Sequence[Sample] = (),
    capa_vocab: Sequence[str] = (),
) -> FeatureReport:
    """Witness report for a WL feature, or per-family counts for a capa rule."""
    parsed = parse_feature_name(name)
    if parsed is not None:
        block, bucket = parsed
        if bucket >= bucket_map.dim:
            raise DataError(
                f"bucket {bucket} out of range for dim {bucket_map.dim}"
            )
        witnesses = bucket_map.witnesses(block, bucket)
        return FeatureReport(
            feature=name,
            kind="wl",
            witnesses=tuple(witnesses),
            empty=not witnesses,
        )
    if name in capa_vocab:
        counts: Counter = Counter()
        for s in samples:
            if s.capa_rules and name in s.capa_rules and s.family:
                counts[s.family] += 1
        return FeatureReport(
            feature=name,
            kind="capa",
            family_counts=tuple(sorted(counts.items())),
        )
    raise DataError(f"unknown feature name {name!r}")


def importance_csv(
    ranking: Sequence[tuple[str, float]],
    bucket_map: BucketMap | None = None,
    top: int = 20,
    max_witnesses: int = 3,
) -> str:
    """CSV of the top features: feature, rank, mean|phi|, top witnesses."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature", "rank", "mean_abs_phi", "witnesses"])
    for rank, (name, value) in enumerate(ranking[:top], start=1):
        witness_text = ""
        if bucket_map is not None:
            parsed = parse_feature_name(name)
            if parsed is not None:
                ws = bucket_map.witnesses(*parsed)[:max_witnesses]
                witness_text = " | ".join(w.pattern for w in ws)
        writer.writerow([name, rank, f"{value:.9f}", witness_text])
    return buf.getvalue()
