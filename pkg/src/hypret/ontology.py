"""Ontology ingestion and structure: OBO flat-file parsing, the is-a DAG with
depth/branching statistics, deterministic size-controlled subsets, and
synthetic b-ary hierarchies for controlled experiments.
"""
from __future__ import annotations

import hashlib
import io
import json
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO

import numpy as np


class OboParseError(ValueError):
    pass


class CycleError(ValueError):
    pass


@dataclass
class OntologyNode:
    id: str
    label: str = ""
    synonyms: list = field(default_factory=list)
    definition: Optional[str] = None
    obsolete: bool = False


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    max_depth: int
    avg_branching: float


class OntologyGraph:
    """Immutable is-a DAG over OntologyNodes.

    isa_edges are (child_id, parent_id) pairs; depth is the minimum number of
    edges from any root. Construction validates acyclicity.
    """

    def __init__(self, nodes: dict, isa_edges: list, dangling: Optional[list] = None):
        self.nodes = dict(nodes)
        self.isa_edges = sorted(set((c, p) for c, p in isa_edges))
        self.dangling = list(dangling or [])
        self.parents_map = {nid: [] for nid in self.nodes}
        self.children_map = {nid: [] for nid in self.nodes}
        for child, parent in self.isa_edges:
            if child not in self.nodes or parent not in self.nodes:
                raise ValueError(f"edge references unknown node: ({child}, {parent})")
            self.parents_map[child].append(parent)
            self.children_map[parent].append(child)
        for nid in self.nodes:
            self.parents_map[nid].sort()
            self.children_map[nid].sort()
        self.roots = sorted(nid for nid in self.nodes if not self.parents_map[nid])
        self.depth, self.unreachable = self._compute_depths()

    def _compute_depths(self):
        depth = {}
        indeg = {nid: len(self.parents_map[nid]) for nid in self.nodes}
        queue = deque(self.roots)
        for r in self.roots:
            depth[r] = 0
        order = []
        while queue:
            nid = queue.popleft()
            order.append(nid)
            for child in self.children_map[nid]:
                indeg[child] -= 1
                if indeg[child] == 0:
                    depth[child] = 1 + min(depth[p] for p in self.parents_map[child])
                    queue.append(child)
        if len(order) != len(self.nodes):
            cycle = self._find_cycle(set(self.nodes) - set(order))
            raise CycleError("not a DAG: " + " -> ".join(cycle))
        unreachable = sorted(nid for nid in self.nodes if nid not in depth)
        return depth, unreachable

    def _find_cycle(self, remaining):
        start = sorted(remaining)[0]
        seen = {}
        path = []
        nid = start
        while nid not in seen:
            seen[nid] = len(path)
            path.append(nid)
            parents = [p for p in self.parents_map[nid] if p in remaining]
            nid = parents[0]
        cycle = path[seen[nid]:] + [nid]
        return cycle

    def __len__(self):
        return len(self.nodes)

    def parents(self, nid: str) -> list:
        return self.parents_map[nid]

    def children(self, nid: str) -> list:
        return self.children_map[nid]

    def ancestors(self, nid: str) -> set:
        out = set()
        stack = list(self.parents_map[nid])
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(self.parents_map[cur])
        return out

    def descendants(self, nid: str) -> set:
        out = set()
        stack = list(self.children_map[nid])
        while stack:
            cur = stack.pop()
            if cur not in out:
                out.add(cur)
                stack.extend(self.children_map[cur])
        return out

    def siblings(self, nid: str) -> set:
        out = set()
        for p in self.parents_map[nid]:
            out.update(self.children_map[p])
        out.discard(nid)
        return out


# ---------------------------------------------------------------------------
# OBO flat-file parsing
# ---------------------------------------------------------------------------

_STANZA_RE = re.compile(r"^\[([A-Za-z_-]+)\]\s*$")
_QUOTED_RE = re.compile(r'"((?:[^"\\]|\\.)*)"')


def _unquote(value: str) -> str:
    m = _QUOTED_RE.match(value.strip())
    if m:
        return m.group(1).replace('\\"', '"')
    return value.strip()


def parse_obo(source) -> OntologyGraph:
    """Parse OBO flat-file text into an OntologyGraph.

    Recognizes id, name, synonym, def, is_a, and is_obsolete inside [Term]
    stanzas; other tags and stanza types are ignored. Obsolete terms are
    dropped; is_a targets that never resolve are kept as dangling records.
    """
    if isinstance(source, str):
        lines = io.StringIO(source)
    else:
        lines = source
    terms = []
    current = None
    in_term = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            m = _STANZA_RE.match(stripped)
            if not m:
                raise OboParseError(f"line {lineno}: malformed stanza header {stripped!r}")
            in_term = m.group(1) == "Term"
            if in_term:
                current = {"lineno": lineno, "synonyms": [], "is_a": []}
                terms.append(current)
            else:
                current = None
            continue
        if not in_term or current is None:
            continue
        if ":" not in stripped:
            raise OboParseError(f"line {lineno}: expected 'tag: value', got {stripped!r}")
        tag, _, value = stripped.partition(":")
        tag = tag.strip()
        value = value.strip()
        if tag == "id":
            current["id"] = value
        elif tag == "name":
            current["name"] = value
        elif tag == "synonym":
            syn = _unquote(value)
            if syn and syn not in current["synonyms"]:
                current["synonyms"].append(syn)
        elif tag == "def":
            current["def"] = _unquote(value)
        elif tag == "is_a":
            target = value.split("!", 1)[0].strip()
            if target:
                current["is_a"].append(target)
        elif tag == "is_obsolete":
            current["obsolete"] = value.lower() == "true"
        # every other tag is intentionally ignored
    nodes = {}
    for t in terms:
        nid = t.get("id", "")
        if not nid:
            raise OboParseError(f"line {t['lineno']}: [Term] stanza without id")
        if t.get("obsolete", False):
            continue
        if nid in nodes:
            raise OboParseError(f"line {t['lineno']}: duplicate term id {nid!r}")
        nodes[nid] = OntologyNode(
            id=nid,
            label=t.get("name", nid),
            synonyms=list(t["synonyms"]),
            definition=t.get("def"),
        )
    edges = []
    dangling = []
    for t in terms:
        nid = t.get("id", "")
        if t.get("obsolete", False) or nid not in nodes:
            continue
        for target in t["is_a"]:
            if target in nodes:
                edges.append((nid, target))
            else:
                dangling.append((nid, target))
    return OntologyGraph(nodes, edges, dangling=dangling)


# ---------------------------------------------------------------------------
# subsets, stats, synthetic hierarchies
# ---------------------------------------------------------------------------


def sample_subset(g: OntologyGraph, target_nodes: int, seed: int) -> OntologyGraph:
    """Deterministic seeded BFS frontier expansion from the roots.

    Frontier nodes at equal depth are visited in a seeded-shuffled order and
    each expands its children in ascending-id order, so the subset is
    root-connected, exactly target_nodes large, and preserves shallow depth
    structure.
    """
    if target_nodes > len(g):
        raise ValueError(f"target {target_nodes} exceeds graph size {len(g)}")
    if target_nodes < 1:
        raise ValueError("target must be >= 1")
    rng = np.random.default_rng(seed)
    selected = []
    selset = set()
    frontier = list(g.roots)
    while frontier and len(selected) < target_nodes:
        order = list(frontier)
        rng.shuffle(order)
        added = []
        for nid in order:
            if len(selected) >= target_nodes:
                break
            if nid in selset:
                continue
            selected.append(nid)
            selset.add(nid)
            added.append(nid)
        next_frontier = set()
        for nid in added:
            for child in g.children_map[nid]:
                if child not in selset:
                    next_frontier.add(child)
        frontier = sorted(next_frontier)
    nodes = {nid: g.nodes[nid] for nid in selected}
    edges = [(c, p) for c, p in g.isa_edges if c in selset and p in selset]
    return OntologyGraph(nodes, edges)


def graph_stats(g: OntologyGraph) -> GraphStats:
    out_degrees = [len(ch) for ch in g.children_map.values() if ch]
    avg_branching = float(np.mean(out_degrees)) if out_degrees else 0.0
    max_depth = max(g.depth.values()) if g.depth else 0
    return GraphStats(
        node_count=len(g.nodes),
        edge_count=len(g.isa_edges),
        max_depth=int(max_depth),
        avg_branching=avg_branching,
    )


_SYLLABLES = [
    "bor", "cil", "dex", "fim", "gol", "hyn", "jur", "kel",
    "mon", "pyl", "quv", "rin", "tev", "wex", "yaz", "zul",
]


def _pseudo_word(rng: np.random.Generator, n_syll: int = 3) -> str:
    return "".join(_SYLLABLES[rng.integers(0, len(_SYLLABLES))] for _ in range(n_syll))


def synth_bary(depth: int, branching: int, seed: int = 0) -> OntologyGraph:
    """Perfect b-ary is-a tree with generated labels and synonyms."""
    if depth < 1 or branching < 2:
        raise ValueError("depth must be >= 1 and branching >= 2")
    count = (branching ** (depth + 1) - 1) // (branching - 1)
    if count > 10**7:
        raise ValueError(f"synthetic tree of {count} nodes exceeds the 1e7 limit")
    rng = np.random.default_rng(seed)
    nodes = {}
    edges = []
    for i in range(count):
        nid = f"SYN:{i:07d}"
        word = _pseudo_word(rng)
        label = f"{word} condition {i}"
        synonyms = [f"{word} variant {i}", f"{_pseudo_word(rng, 2)} form {i}"]
        definition = f"A {word} condition generated at position {i}."
        nodes[nid] = OntologyNode(id=nid, label=label, synonyms=synonyms, definition=definition)
        if i > 0:
            parent = (i - 1) // branching
            edges.append((nid, f"SYN:{parent:07d}"))
    return OntologyGraph(nodes, edges)


# ---------------------------------------------------------------------------
# serialization: line-delimited JSON, one node per line
# ---------------------------------------------------------------------------

GRAPH_FORMAT = "onto-v1"


def graph_to_jsonl(g: OntologyGraph) -> str:
    stats = graph_stats(g)
    header = {
        "format": GRAPH_FORMAT,
        "node_count": stats.node_count,
        "edge_count": stats.edge_count,
        "max_depth": stats.max_depth,
        "avg_branching": round(stats.avg_branching, 6),
    }
    out = [json.dumps(header, sort_keys=True)]
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        rec = {
            "id": node.id,
            "label": node.label,
            "synonyms": node.synonyms,
            "definition": node.definition,
            "parents": g.parents_map[nid],
            "depth": g.depth.get(nid),
        }
        out.append(json.dumps(rec, sort_keys=True))
    return "\n".join(out) + "\n"


def save_graph_jsonl(g: OntologyGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(graph_to_jsonl(g))


def load_graph_jsonl(path_or_text) -> OntologyGraph:
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = json.loads(lines[0])
    if header.get("format") != GRAPH_FORMAT:
        raise ValueError(f"unsupported graph format: {header.get('format')!r}")
    nodes = {}
    edges = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        nodes[rec["id"]] = OntologyNode(
            id=rec["id"],
            label=rec["label"],
            synonyms=list(rec.get("synonyms", [])),
            definition=rec.get("definition"),
        )
        for parent in rec.get("parents", []):
            edges.append((rec["id"], parent))
    return OntologyGraph(nodes, edges)


def graph_checksum(g: OntologyGraph) -> str:
    return hashlib.sha256(graph_to_jsonl(g).encode("utf-8")).hexdigest()
