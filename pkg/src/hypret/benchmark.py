"""Benchmark generation: stratified query families over the ontology (entity
lookup, taxonomy navigation, mixed intent), entity-level splits, depth
buckets, and the Gaussian perturbation used by the robustness sweep.

Everything is a pure function of (graph, seed, caps).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ontology import OntologyGraph, graph_checksum

logger = logging.getLogger(__name__)

BENCH_FORMAT = "bench-v1"

FAMILIES = ("QE", "QH-parent", "QH-children", "QH-ancestor", "QH-descendant", "QM")

QE_TEMPLATES = ("What is {label}?", "Define {label}.")
QH_TEMPLATES = {
    "QH-parent": "What is the parent of {label}?",
    "QH-children": "What are subtypes of {label}?",
    "QH-ancestor": "What are ancestors of {label}?",
    "QH-descendant": "What are descendants of {label}?",
}
QM_TEMPLATES = (
    "Concepts similar to {label} at the same specificity.",
    "Siblings of {label} in the ontology.",
)


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    family: str
    source_id: str
    truth: tuple
    depth_bucket: int
    split: str
    gate_label: str  # "H" | "E" | "none"

    def to_json(self) -> str:
        return json.dumps(
            {
                "query_id": self.query_id,
                "text": self.text,
                "family": self.family,
                "source_id": self.source_id,
                "truth": list(self.truth),
                "depth_bucket": self.depth_bucket,
                "split": self.split,
                "gate_label": self.gate_label,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(line: str) -> "QueryRecord":
        rec = json.loads(line)
        return QueryRecord(
            query_id=rec["query_id"],
            text=rec["text"],
            family=rec["family"],
            source_id=rec["source_id"],
            truth=tuple(rec["truth"]),
            depth_bucket=rec["depth_bucket"],
            split=rec["split"],
            gate_label=rec["gate_label"],
        )


@dataclass
class GenCaps:
    """Per-entity generation caps: up to qe entity queries (one synonym, one
    template), one of each taxonomy subtype, one mixed-intent query."""

    qe: int = 2
    qh: int = 1
    qm: int = 1


def split_entities(g: OntologyGraph, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> dict:
    """Seeded uniform entity split; sizes follow cumulative rounding."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    names = ("train", "val", "test")
    ids = sorted(g.nodes)
    rng = np.random.default_rng(seed)
    perm = list(ids)
    rng.shuffle(perm)
    n = len(perm)
    bounds = [int(round(sum(ratios[: i + 1]) * n)) for i in range(len(ratios))]
    out = {}
    start = 0
    for name, end in zip(names, bounds):
        for nid in perm[start:end]:
            out[nid] = name
        start = end
    return out


def depth_buckets(g: OntologyGraph, count: int = 4, boundaries=None):
    """Bucket assignment by depth; quantile-based by default, or explicit
    inclusive (lo, hi) boundaries (e.g. [(0, 4), (5, 5), (6, 6)]).

    Returns (assignment dict, bucket description list).
    """
    if boundaries is not None:
        desc = [tuple(b) for b in boundaries]
        assign = {}
        for nid in g.nodes:
            d = g.depth.get(nid, 0)
            idx = len(desc) - 1
            for i, (lo, hi) in enumerate(desc):
                if lo <= d <= hi:
                    idx = i
                    break
            else:
                if d < desc[0][0]:
                    idx = 0
            assign[nid] = idx
        return assign, desc
    depths = np.array([g.depth.get(nid, 0) for nid in sorted(g.nodes)], dtype=np.float64)
    cuts = sorted({float(np.quantile(depths, i / count)) for i in range(1, count)})
    assign = {nid: int(np.searchsorted(cuts, g.depth.get(nid, 0), side="right")) for nid in g.nodes}
    used = sorted(set(assign.values()))
    desc = [("quantile", c) for c in cuts] if cuts else [("single", 0)]
    # compact bucket labels to 0..m-1
    remap = {b: i for i, b in enumerate(used)}
    assign = {nid: remap[b] for nid, b in assign.items()}
    return assign, desc


def gen_queries(
    g: OntologyGraph,
    seed: int = 0,
    caps: Optional[GenCaps] = None,
    splits: Optional[dict] = None,
    bucket_count: int = 4,
    bucket_boundaries=None,
) -> list:
    """Instantiate the query templates over every entity, deterministically.

    Q-E queries carry a single-truth entity and gate label E; Q-H queries take
    their truth sets from the DAG and carry label H; Q-M queries target the
    same-depth-bucket sibling set and stay unlabeled. Entities pass their
    split to every query they generate; a synonym string that would repeat in
    a different split is skipped (leakage guard).
    """
    caps = caps or GenCaps()
    splits = splits or split_entities(g, seed=seed)
    buckets, _ = depth_buckets(g, count=bucket_count, boundaries=bucket_boundaries)
    rng = np.random.default_rng(seed)
    records = []
    seen_qe_texts = {}
    skipped = {"leaky_synonyms": 0, "missing_truth": 0}
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        split = splits[nid]
        bucket = buckets[nid]

        def emit(family, text, truth, label, suffix=""):
            records.append(
                QueryRecord(
                    query_id=f"{family}:{nid}{suffix}",
                    text=text,
                    family=family,
                    source_id=nid,
                    truth=tuple(sorted(truth)),
                    depth_bucket=bucket,
                    split=split,
                    gate_label=label,
                )
            )

        if caps.qe >= 1 and node.synonyms:
            syn = node.synonyms[int(rng.integers(0, len(node.synonyms)))]
            key = syn.lower()
            prior = seen_qe_texts.get(key)
            if prior is not None and prior != split:
                skipped["leaky_synonyms"] += 1
            else:
                seen_qe_texts[key] = split
                emit("QE", syn, [nid], "E", suffix="#syn")
        if caps.qe >= 2:
            tmpl = QE_TEMPLATES[int(rng.integers(0, len(QE_TEMPLATES)))]
            emit("QE", tmpl.format(label=node.label), [nid], "E", suffix="#tmpl")
        if caps.qh >= 1:
            qh_truths = {
                "QH-parent": g.parents(nid),
                "QH-children": g.children(nid),
                "QH-ancestor": sorted(g.ancestors(nid)),
                "QH-descendant": sorted(g.descendants(nid)),
            }
            for family, truth in qh_truths.items():
                if not truth:
                    skipped["missing_truth"] += 1
                    continue
                emit(family, QH_TEMPLATES[family].format(label=node.label), truth, "H")
        if caps.qm >= 1:
            sibs = [s for s in sorted(g.siblings(nid)) if buckets[s] == bucket]
            if sibs:
                tmpl = QM_TEMPLATES[int(rng.integers(0, len(QM_TEMPLATES)))]
                emit("QM", tmpl.format(label=node.label), sibs, "none")
    if skipped["leaky_synonyms"]:
        logger.info("skipped %d synonym queries to prevent cross-split leakage", skipped["leaky_synonyms"])
    return records


def perturb_embedding(e: np.ndarray, sigma: float, seed: int = 0, renormalize: bool = True) -> np.ndarray:
    """Add N(0, sigma^2 I) noise; re-normalize when the encoder is unit-norm."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    e = np.asarray(e, dtype=np.float64)
    if sigma == 0.0:
        return e.copy()
    rng = np.random.default_rng(seed)
    out = e + rng.normal(0.0, sigma, size=e.shape)
    if renormalize:
        n = np.linalg.norm(out)
        if n > 0:
            out = out / n
    return out


def save_benchmark(records, path, g: Optional[OntologyGraph] = None, seed: Optional[int] = None) -> None:
    header = {"format": BENCH_FORMAT, "count": len(records), "seed": seed}
    if g is not None:
        header["graph_checksum"] = graph_checksum(g)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_benchmark(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    header = json.loads(lines[0])
    if header.get("format") != BENCH_FORMAT:
        raise ValueError(f"unsupported benchmark format: {header.get('format')!r}")
    return [QueryRecord.from_json(ln) for ln in lines[1:]], header
