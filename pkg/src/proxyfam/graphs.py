"""Program-graph domain types, preprocessing, and the graph file format.

A sample's code is represented by up to two directed graphs with
string-labeled nodes: a control-flow graph (nodes are basic blocks) and a
function-call graph (nodes are methods, edges are call sites). Preprocessing
drops nodes whose label matches a standard-library package prefix and keeps
only the largest weakly connected component, so feature extraction sees
application and SDK code rather than platform boilerplate.

Graph file format (one graph per file, line-oriented, UTF-8):

    kind <CFG|FCG>
    n <node-id> <label>     (one per node, in order)
    e <src-id> <dst-id>     (one per edge)

Node ids and labels carry no whitespace; labels escape awkward characters
as ``\\uXXXX``. Unknown line tags are rejected.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

from .errors import GraphFormatError

# §-style standard-library and common third-party package prefixes whose
# nodes are dropped before feature extraction.
DEFAULT_LIBRARY_PREFIXES: tuple[str, ...] = (
    "java.",
    "javax.",
    "android.",
    "androidx.",
    "kotlin.",
    "com.google.",
    "org.apache.",
    "org.json.",
    "org.xml.",
    "sun.",
    "dalvik.",
)


class GraphKind(str, enum.Enum):
    CFG = "CFG"
    FCG = "FCG"


@dataclass(frozen=True)
class LabeledDigraph:
    """Directed graph with string-labeled nodes.

    Node order is significant and preserved by every operation. Node ids are
    unique; edges are deduplicated on construction (first occurrence wins);
    self-loops are allowed. Edge endpoints must name existing nodes.
    """

    kind: GraphKind
    nodes: tuple[tuple[str, str], ...]
    edges: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", GraphKind(self.kind))
        nodes = tuple((str(i), str(l)) for i, l in self.nodes)
        ids = [i for i, _ in nodes]
        id_set = set(ids)
        if len(id_set) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate node id {dup!r}")
        seen: set[tuple[str, str]] = set()
        edges: list[tuple[str, str]] = []
        for src, dst in self.edges:
            src, dst = str(src), str(dst)
            if src not in id_set or dst not in id_set:
                missing = src if src not in id_set else dst
                raise ValueError(f"edge endpoint {missing!r} is not a node")
            if (src, dst) not in seen:
                seen.add((src, dst))
                edges.append((src, dst))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(edges))

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {i: k for k, (i, _) in enumerate(self.nodes)}

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for _, l in self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class PrefixFilter:
    """Case-sensitive package-prefix matcher against node labels."""

    prefixes: tuple[str, ...] = DEFAULT_LIBRARY_PREFIXES

    def __post_init__(self) -> None:
        if any(not p for p in self.prefixes):
            raise ValueError("empty prefix in PrefixFilter")

    def matches(self, label: str) -> bool:
        return label.startswith(self.prefixes) if self.prefixes else False


def filter_library_nodes(
    g: LabeledDigraph, f: PrefixFilter | None = None
) -> LabeledDigraph:
    """Induced subgraph on the nodes whose label matches no filter prefix."""
    f = f if f is not None else PrefixFilter()
    keep = [(i, l) for i, l in g.nodes if not f.matches(l)]
    kept = {i for i, _ in keep}
    edges = [(s, d) for s, d in g.edges if s in kept and d in kept]
    return LabeledDigraph(g.kind, tuple(keep), tuple(edges))


def largest_connected_component(g: LabeledDigraph) -> LabeledDigraph:
    """Induced subgraph on the largest weakly connected component.

    Connectivity ignores edge direction; the output keeps direction. Ties on
    size go to the component containing the earliest node in node order.
    Empty input yields an empty graph.
    """
    n = len(g.nodes)
    if n == 0:
        return g
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    index = g.node_index
    for src, dst in g.edges:
        ra, rb = find(index[src]), find(index[dst])
        if ra != rb:
            # Root at the smaller node position so each component's
            # representative is its earliest node.
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    sizes: dict[int, int] = {}
    for v in range(n):
        sizes[find(v)] = sizes.get(find(v), 0) + 1
    best = max(sizes, key=lambda r: (sizes[r], -r))
    keep_idx = [v for v in range(n) if find(v) == best]
    keep_ids = {g.nodes[v][0] for v in keep_idx}
    nodes = tuple(g.nodes[v] for v in keep_idx)
    edges = tuple((s, d) for s, d in g.edges if s in keep_ids and d in keep_ids)
    return LabeledDigraph(g.kind, nodes, edges)


def union_cfgs(per_method: Sequence[tuple[str, LabeledDigraph]]) -> LabeledDigraph:
    """Union per-method CFGs into one per-application CFG.

    Node ids are namespaced as ``<method-name>#<block-index>`` (index =
    position in the method's node order) so distinct methods never collide.
    """
    seen_methods: set[str] = set()
    nodes: list[tuple[str, str]] = []
    edges: list[tuple[str, str]] = []
    for method, cfg in per_method:
        if cfg.kind is not GraphKind.CFG:
            raise ValueError(f"union_cfgs input for {method!r} has kind {cfg.kind.value}")
        if method in seen_methods:
            raise ValueError(f"duplicate method name {method!r}")
        seen_methods.add(method)
        renamed = {nid: f"{method}#{k}" for k, (nid, _) in enumerate(cfg.nodes)}
        nodes.extend((renamed[nid], label) for nid, label in cfg.nodes)
        edges.extend((renamed[s], renamed[d]) for s, d in cfg.edges)
    return LabeledDigraph(GraphKind.CFG, tuple(nodes), tuple(edges))


_UNESCAPE_RE = re.compile(r"\\u([0-9a-fA-F]{4})")


def _escape_token(text: str) -> str:
    out = []
    for ch in text:
        if ch == "\\" or ch.isspace():
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def _unescape_token(text: str) -> str:
    return _UNESCAPE_RE.sub(lambda m: chr(int(m.group(1), 16)), text)


def serialize_graph(g: LabeledDigraph) -> str:
    lines = [f"kind {g.kind.value}"]
    for nid, label in g.nodes:
        if any(ch.isspace() for ch in nid):
            raise ValueError(f"node id {nid!r} contains whitespace")
        lines.append(f"n {_escape_token(nid)} {_escape_token(label)}")
    for src, dst in g.edges:
        lines.append(f"e {_escape_token(src)} {_escape_token(dst)}")
    return "\n".join(lines) + "\n"


def parse_graph(text: str) -> LabeledDigraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GraphFormatError("empty graph file")
    first = lines[0].split(" ")
    if len(first) != 2 or first[0] != "kind" or first[1] not in ("CFG", "FCG"):
        raise GraphFormatError(f"bad kind line: {lines[0]!r}")
    kind = GraphKind(first[1])
    nodes: list[tuple[str, str]] = []
    edges: list[tuple[str, str]] = []
    in_edges = False
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(" ")
        if parts[0] == "n":
            if in_edges:
                raise GraphFormatError(f"line {lineno}: node line after edge lines")
            if len(parts) != 3:
                raise GraphFormatError(f"line {lineno}: expected 'n <id> <label>'")
            nodes.append((_unescape_token(parts[1]), _unescape_token(parts[2])))
        elif parts[0] == "e":
            in_edges = True
            if len(parts) != 3:
                raise GraphFormatError(f"line {lineno}: expected 'e <src> <dst>'")
            edges.append((_unescape_token(parts[1]), _unescape_token(parts[2])))
        else:
            raise GraphFormatError(f"line {lineno}: unknown line tag {parts[0]!r}")
    try:
        return LabeledDigraph(kind, tuple(nodes), tuple(edges))
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from exc


def write_graph_file(path: Path | str, g: LabeledDigraph) -> None:
    Path(path).write_text(serialize_graph(g), encoding="utf-8")


def read_graph_file(path: Path | str) -> LabeledDigraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphFormatError(f"cannot read graph file {path}: {exc}") from exc
    try:
        return parse_graph(text)
    except GraphFormatError as exc:
        raise GraphFormatError(f"{path}: {exc}") from exc


def is_weakly_connected(g: LabeledDigraph) -> bool:
    """BFS over the undirected closure; empty graphs count as connected."""
    if not g.nodes:
        return True
    adj: dict[str, set[str]] = {i: set() for i, _ in g.nodes}
    for s, d in g.edges:
        adj[s].add(d)
        adj[d].add(s)
    start = g.nodes[0][0]
    seen = {start}
    frontier = [start]
    while frontier:
        nxt: list[str] = []
        for v in frontier:
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    nxt.append(u)
        frontier = nxt
    return len(seen) == len(g.nodes)


def preprocess(
    g: LabeledDigraph,
    f: PrefixFilter | None = None,
    *,
    drop_library: bool = True,
    keep_largest_component: bool = True,
) -> LabeledDigraph:
    """Standard preprocessing: library-prefix filter, then largest component."""
    if drop_library:
        g = filter_library_nodes(g, f)
    if keep_largest_component:
        g = largest_connected_component(g)
    return g
