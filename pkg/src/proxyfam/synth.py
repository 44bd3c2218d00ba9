"""Seeded synthetic corpus generator for end-to-end verification.

Simulates an SDK-embedding ecosystem at desk scale: each family owns a fixed
SDK subgraph (per graph type) that gets spliced into a fresh random host
graph per sample, so family membership leaves a stable structural
fingerprint inside otherwise-unrelated programs. Knobs mirror the measured
ecosystem shape: heavily imbalanced family sizes, per-family DEX-reuse
rates (one family is nearly all reuse, others mostly mint fresh DEX files),
a shared library subgraph present in every sample, and shared string tokens
skewed by family so that raw signature rules come out over-broad until the
discriminativeness filter runs.

Generation is fully deterministic: the same config (including seed)
produces byte-identical corpus files. Ground truth (per-sample family,
planted SDK node labels, planted tokens, DEX bookkeeping) is written to a
sidecar JSON so experiments cannot accidentally consume it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, NON_PROXY_LABEL, load_corpus
from .errors import ConfigError
from .graphs import (
    GraphKind,
    LabeledDigraph,
    PrefixFilter,
    preprocess,
    read_graph_file,
    write_graph_file,
)
from .wl import WlConfig, extract_features

# rng stream tags: keep the independent substreams from colliding
_STREAM_SDK = 1
_STREAM_SHARED_LIB = 2
_STREAM_SAMPLE = 3
_STREAM_TOKENS = 4
_STREAM_MOTIFS = 5


@dataclass(frozen=True)
class SynthConfig:
    families: int = 4
    samples_per_family: tuple[int, ...] = (4, 167, 140, 27)
    include_non_proxy: bool = True
    non_proxy_samples: int = 100
    sdk_size: int = 40
    host_size_min: int = 100
    host_size_max: int = 400
    dex_reuse_rates: tuple[float, ...] = (0.15, 0.35, 0.95, 0.15)
    shared_lib_size: int = 20
    shared_tokens: int = 30
    family_tokens: int = 8
    noise_tokens: int = 10
    capa_coverage: float = 0.6
    family_capa_rules: int = 5
    shared_capa_rules: int = 4
    attach_edges: int = 3
    library_node_fraction: float = 0.08
    host_vocab: int = 300
    seed: int = 42

    def __post_init__(self) -> None:
        if self.families < 1:
            raise ConfigError("families must be >= 1")
        if len(self.samples_per_family) != self.families:
            raise ConfigError(
                f"samples_per_family has {len(self.samples_per_family)} entries "
                f"for {self.families} families"
            )
        if len(self.dex_reuse_rates) != self.families:
            raise ConfigError(
                f"dex_reuse_rates has {len(self.dex_reuse_rates)} entries "
                f"for {self.families} families"
            )
        if any(n < 1 for n in self.samples_per_family):
            raise ConfigError("samples_per_family entries must be >= 1")
        if self.include_non_proxy and self.non_proxy_samples < 1:
            raise ConfigError("non_proxy_samples must be >= 1 when included")
        if any(not 0.0 <= r <= 1.0 for r in self.dex_reuse_rates):
            raise ConfigError("dex_reuse_rates must lie in [0, 1]")
        if not 0.0 <= self.capa_coverage <= 1.0:
            raise ConfigError("capa_coverage must lie in [0, 1]")
        if not 0.0 <= self.library_node_fraction <= 1.0:
            raise ConfigError("library_node_fraction must lie in [0, 1]")
        if self.sdk_size < 0:
            raise ConfigError("sdk_size must be >= 0")
        if self.host_size_min < 2 or self.host_size_max < self.host_size_min:
            raise ConfigError("need 2 <= host_size_min <= host_size_max")
        if self.sdk_size > self.host_size_min:
            raise ConfigError("sdk_size must not exceed host_size_min")
        if self.attach_edges < 1:
            raise ConfigError("attach_edges must be >= 1")
        if self.host_vocab < 1:
            raise ConfigError("host_vocab must be >= 1")

    def family_names(self) -> list[str]:
        return [f"family_{i:02d}" for i in range(self.families)]

    def label_set(self) -> list[str]:
        labels = self.family_names()
        if self.include_non_proxy:
            labels.append(NON_PROXY_LABEL)
        return sorted(labels)


@dataclass
class GroundTruth:
    family_of: dict[str, str]
    planted_methods: dict[str, list[str]]  # family -> FCG SDK labels
    planted_blocks: dict[str, list[str]]  # family -> CFG SDK labels
    planted_tokens: dict[str, list[str]]
    shared_tokens: list[str]
    dex_members: dict[str, list[str]]  # hash -> sample ids

    def to_json(self) -> str:
        payload = {
            "family_of": self.family_of,
            "planted_methods": self.planted_methods,
            "planted_blocks": self.planted_blocks,
            "planted_tokens": self.planted_tokens,
            "shared_tokens": self.shared_tokens,
            "dex_members": self.dex_members,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        payload = json.loads(text)
        return cls(
            family_of=payload["family_of"],
            planted_methods=payload["planted_methods"],
            planted_blocks=payload["planted_blocks"],
            planted_tokens=payload["planted_tokens"],
            shared_tokens=payload["shared_tokens"],
            dex_members=payload["dex_members"],
        )


@dataclass(frozen=True)
class GeneratedCorpus:
    out_dir: Path
    manifest_path: Path
    ground_truth_path: Path
    family_counts: dict[str, int]
    group_count: int


def _sha(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


def _spanning_edges(rng: np.random.Generator, n: int, extra: int) -> list[tuple[int, int]]:
    """Weakly connected random digraph: spanning links plus extra edges."""
    edges: list[tuple[int, int]] = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.append((v, u) if rng.random() < 0.5 else (u, v))
    for _ in range(extra):
        a = int(rng.integers(0, n))
        b = int(rng.integers(0, n))
        edges.append((a, b))
    return edges


def _preferential_edges(rng: np.random.Generator, n: int, m: int = 2) -> list[tuple[int, int]]:
    """Preferential attachment wiring with randomized edge direction."""
    edges: list[tuple[int, int]] = []
    weight = np.ones(n, dtype=np.float64)
    for v in range(1, n):
        k = min(m, v)
        probs = weight[:v] / weight[:v].sum()
        targets = rng.choice(v, size=k, replace=False, p=probs)
        for t in targets:
            t = int(t)
            edges.append((v, t) if rng.random() < 0.5 else (t, v))
            weight[t] += 1.0
            weight[v] += 1.0
    return edges


@dataclass
class _Subgraph:
    labels: list[str]
    edges: list[tuple[int, int]]


def _make_sdk_subgraph(
    config: SynthConfig, family: str, kind: GraphKind, stream: int
) -> _Subgraph:
    rng = np.random.default_rng([config.seed, stream, hash_stream(family), kind_tag(kind)])
    n = config.sdk_size
    token = "m" if kind is GraphKind.FCG else "bb"
    labels = [f"com.{family}.sdk.{token}{j}" for j in range(n)]
    edges = _spanning_edges(rng, n, extra=n) if n else []
    return _Subgraph(labels=labels, edges=edges)


def _make_shared_lib(config: SynthConfig, kind: GraphKind) -> _Subgraph:
    rng = np.random.default_rng([config.seed, _STREAM_SHARED_LIB, kind_tag(kind)])
    n = config.shared_lib_size
    token = "m" if kind is GraphKind.FCG else "bb"
    labels = [f"com.sharedlib.util.{token}{j}" for j in range(n)]
    edges = _spanning_edges(rng, n, extra=n) if n else []
    return _Subgraph(labels=labels, edges=edges)


def hash_stream(name: str) -> int:
    """Stable small integer derived from a name, for rng stream keys."""
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big")


def kind_tag(kind: GraphKind) -> int:
    return 0 if kind is GraphKind.CFG else 1


def _host_vocabulary(config: SynthConfig, kind: GraphKind) -> list[str]:
    """Shared pool of host node labels; method and block names repeat
    heavily across real applications, which is what defeats naive
    per-sample memorization."""
    token = "m" if kind is GraphKind.FCG else "bb"
    return [f"com.app.common.{token}{j:04d}" for j in range(config.host_vocab)]


def _library_vocabulary(kind: GraphKind) -> list[str]:
    token = "m" if kind is GraphKind.FCG else "bb"
    return [f"android.util.{token}{j:02d}" for j in range(50)]


def _build_sample_graph(
    rng: np.random.Generator,
    config: SynthConfig,
    kind: GraphKind,
    host_vocab: Sequence[str],
    lib_vocab: Sequence[str],
    sdk: _Subgraph | None,
    shared: _Subgraph,
) -> LabeledDigraph:
    n_host = int(rng.integers(config.host_size_min, config.host_size_max + 1))
    host_labels = [
        host_vocab[int(rng.integers(len(host_vocab)))] for _ in range(n_host)
    ]
    n_lib = int(round(config.library_node_fraction * n_host))
    if n_lib:
        lib_positions = rng.choice(n_host, size=n_lib, replace=False)
        for p in lib_positions:
            host_labels[int(p)] = lib_vocab[int(rng.integers(len(lib_vocab)))]
    host_edges = _preferential_edges(rng, n_host)

    labels = list(host_labels)
    edges = list(host_edges)
    app_nodes = [j for j, lbl in enumerate(host_labels) if not lbl.startswith("android.")]

    def splice(sub: _Subgraph) -> None:
        if not sub.labels:
            return
        base = len(labels)
        labels.extend(sub.labels)
        edges.extend((base + a, base + b) for a, b in sub.edges)
        for _ in range(config.attach_edges):
            host_v = int(app_nodes[int(rng.integers(len(app_nodes)))])
            sub_v = base + int(rng.integers(len(sub.labels)))
            edges.append((host_v, sub_v) if rng.random() < 0.5 else (sub_v, host_v))

    if sdk is not None:
        splice(sdk)
    splice(shared)
    nodes = tuple((f"v{j}", lbl) for j, lbl in enumerate(labels))
    edge_ids = tuple((f"v{a}", f"v{b}") for a, b in edges)
    return LabeledDigraph(kind, nodes, edge_ids)


def generate(config: SynthConfig, out_dir: Path | str) -> GeneratedCorpus:
    """Write manifest, graph files, string files, and the ground-truth sidecar."""
    out_dir = Path(out_dir)
    (out_dir / "graphs").mkdir(parents=True, exist_ok=True)
    (out_dir / "strings").mkdir(parents=True, exist_ok=True)

    families = config.family_names()
    all_classes = families + ([NON_PROXY_LABEL] if config.include_non_proxy else [])
    sdk_fcg = {f: _make_sdk_subgraph(config, f, GraphKind.FCG, _STREAM_SDK) for f in families}
    sdk_cfg = {f: _make_sdk_subgraph(config, f, GraphKind.CFG, _STREAM_SDK) for f in families}
    shared_fcg = _make_shared_lib(config, GraphKind.FCG)
    shared_cfg = _make_shared_lib(config, GraphKind.CFG)
    host_vocab_fcg = _host_vocabulary(config, GraphKind.FCG)
    host_vocab_cfg = _host_vocabulary(config, GraphKind.CFG)
    lib_vocab_fcg = _library_vocabulary(GraphKind.FCG)
    lib_vocab_cfg = _library_vocabulary(GraphKind.CFG)

    token_rng = np.random.default_rng([config.seed, _STREAM_TOKENS])
    planted_tokens = {
        f: [f"{f}/secret/{i:02d}" for i in range(config.family_tokens)] for f in families
    }
    shared_token_list = [f"sharedlib/token/{i:02d}" for i in range(config.shared_tokens)]
    # each shared token leans toward one class, so raw signature rules pick
    # it up and then fire across families
    dominant_of = {
        t: all_classes[int(token_rng.integers(len(all_classes)))]
        for t in shared_token_list
    }
    family_rules = {
        f: [f"{f}-capability-{i:02d}" for i in range(config.family_capa_rules)]
        for f in families
    }
    shared_rules = [f"common-capability-{i:02d}" for i in range(config.shared_capa_rules)]

    counts = dict(zip(families, config.samples_per_family))
    if config.include_non_proxy:
        counts[NON_PROXY_LABEL] = config.non_proxy_samples

    manifest_rows: list[str] = []
    family_of: dict[str, str] = {}
    dex_members: dict[str, list[str]] = {}
    dex_pools: dict[str, list[str]] = {c: [] for c in all_classes}
    reuse_rate = dict(zip(families, config.dex_reuse_rates))
    reuse_rate[NON_PROXY_LABEL] = 0.0

    for fam_idx, fam in enumerate(all_classes):
        for i in range(counts[fam]):
            rng = np.random.default_rng([config.seed, _STREAM_SAMPLE, fam_idx, i])
            sid = _sha(f"sample:{config.seed}:{fam}:{i}")
            tag = f"{fam_idx}x{i}"
            family_of[sid] = fam
            is_proxy = fam != NON_PROXY_LABEL

            cfg_graph = _build_sample_graph(
                rng, config, GraphKind.CFG, host_vocab_cfg, lib_vocab_cfg,
                sdk_cfg[fam] if is_proxy else None, shared_cfg,
            )
            fcg_graph = _build_sample_graph(
                rng, config, GraphKind.FCG, host_vocab_fcg, lib_vocab_fcg,
                sdk_fcg[fam] if is_proxy else None, shared_fcg,
            )
            cfg_rel = f"graphs/{sid}.cfg.graph"
            fcg_rel = f"graphs/{sid}.fcg.graph"
            write_graph_file(out_dir / cfg_rel, cfg_graph)
            write_graph_file(out_dir / fcg_rel, fcg_graph)

            pool = dex_pools[fam]
            if pool and rng.random() < reuse_rate[fam]:
                dex = pool[int(rng.integers(len(pool)))]
            else:
                dex = _sha(f"dex:{config.seed}:{fam}:{len(pool)}")
                pool.append(dex)
            dex_members.setdefault(dex, []).append(sid)

            strings: set[str] = set()
            if is_proxy:
                strings.update(
                    t for t in planted_tokens[fam] if rng.random() < 0.95
                )
            strings.update(
                t
                for t in shared_token_list
                if rng.random() < (0.85 if dominant_of[t] == fam else 0.30)
            )
            strings.update(f"noise/{tag}/{j:02d}" for j in range(config.noise_tokens))
            strings_rel = f"strings/{sid}.txt"
            (out_dir / strings_rel).write_text(
                "\n".join(sorted(strings)) + "\n", encoding="utf-8"
            )

            capa: set[str] = set()
            if rng.random() < config.capa_coverage:
                if is_proxy:
                    capa.update(r for r in family_rules[fam] if rng.random() < 0.9)
                capa.update(r for r in shared_rules if rng.random() < 0.5)
            capa_field = ",".join(sorted(capa)) if capa else "-"
            manifest_rows.append(
                "\t".join(
                    [
                        sid,
                        fam,
                        cfg_rel,
                        fcg_rel,
                        dex,
                        capa_field,
                        strings_rel,
                    ]
                )
            )

    manifest_path = out_dir / "manifest.tsv"
    header = "#labels " + ",".join(sorted(all_classes))
    manifest_path.write_text(
        header + "\n" + "\n".join(manifest_rows) + "\n", encoding="utf-8"
    )

    truth = GroundTruth(
        family_of=family_of,
        planted_methods={f: list(sdk_fcg[f].labels) for f in families},
        planted_blocks={f: list(sdk_cfg[f].labels) for f in families},
        planted_tokens=planted_tokens,
        shared_tokens=shared_token_list,
        dex_members={h: sorted(ids) for h, ids in dex_members.items()},
    )
    truth_path = out_dir / "ground_truth.json"
    truth_path.write_text(truth.to_json(), encoding="utf-8")

    return GeneratedCorpus(
        out_dir=out_dir,
        manifest_path=manifest_path,
        ground_truth_path=truth_path,
        family_counts={c: counts[c] for c in all_classes},
        group_count=len(dex_members),
    )


@dataclass(frozen=True)
class FamilySeparability:
    family: str
    planted_total: int
    planted_surviving: int
    within_cosine: float
    cross_cosine: float

    @property
    def prefix_ok(self) -> bool:
        return self.planted_surviving == self.planted_total

    @property
    def cosine_ok(self) -> bool:
        return self.within_cosine > self.cross_cosine

    @property
    def ok(self) -> bool:
        return self.prefix_ok and self.cosine_ok and self.planted_total > 0


@dataclass(frozen=True)
class SeparabilityReport:
    families: tuple[FamilySeparability, ...]

    @property
    def ok(self) -> bool:
        return all(f.ok for f in self.families)

    def text(self) -> str:
        lines = ["family            planted  surviving  within-cos  cross-cos  ok"]
        for f in self.families:
            lines.append(
                f"{f.family:<16}  {f.planted_total:>7}  {f.planted_surviving:>9}"
                f"  {f.within_cosine:>10.4f}  {f.cross_cosine:>9.4f}  {'yes' if f.ok else 'NO'}"
            )
        return "\n".join(lines) + "\n"


def verify_separability(
    corpus: Corpus,
    truth: GroundTruth,
    wl_config: WlConfig | None = None,
) -> SeparabilityReport:
    """Planted-signal survival and within/cross-family cosine contrast.

    Failures are reported, not raised: a degenerate config (sdk_size 0)
    shows up here as a failed check.
    """
    wl_config = wl_config or WlConfig()
    prefix_filter = PrefixFilter()
    vectors: dict[str, np.ndarray] = {}
    for s in corpus.samples:
        cfg_g = preprocess(read_graph_file(s.cfg_path), prefix_filter) if s.cfg_path else None
        fcg_g = preprocess(read_graph_file(s.fcg_path), prefix_filter) if s.fcg_path else None
        vectors[s.id] = extract_features(cfg_g, fcg_g, wl_config).values
    ids = [s.id for s in corpus.samples if s.family is not None]
    matrix = np.stack([vectors[i] for i in ids])
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    unit = matrix / norms
    sims = unit @ unit.T
    fams = np.array([corpus.by_id()[i].family for i in ids])

    rows = []
    for fam in sorted(truth.planted_methods):
        planted = truth.planted_methods.get(fam, []) + truth.planted_blocks.get(fam, [])
        surviving = sum(1 for lbl in planted if not prefix_filter.matches(lbl))
        mask = fams == fam
        within = cross = 0.0
        if mask.sum() > 1:
            block = sims[np.ix_(mask, mask)]
            within = float((block.sum() - np.trace(block)) / (mask.sum() * (mask.sum() - 1)))
        if mask.sum() >= 1 and (~mask).sum() >= 1:
            cross = float(sims[np.ix_(mask, ~mask)].mean())
        rows.append(
            FamilySeparability(
                family=fam,
                planted_total=len(planted),
                planted_surviving=surviving,
                within_cosine=within,
                cross_cosine=cross,
            )
        )
    return SeparabilityReport(families=tuple(rows))


def load_ground_truth(path: Path | str) -> GroundTruth:
    return GroundTruth.from_json(Path(path).read_text(encoding="utf-8"))
