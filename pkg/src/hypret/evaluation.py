"""Metrics and experiment drivers: Hits@k / MRR / nDCG, ancestor F1,
indexability recall with the oversampling stress sweep, the routing-risk
decomposition, gate metrics with AUC, the efficiency probe, and the
theory-curve tables.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kernels
from .geometry import kappa, oversampling_threshold, required_radius
from .index import build_index
from .training import EmbeddingTable


# ---------------------------------------------------------------------------
# ranking metrics
# ---------------------------------------------------------------------------


def hits_at_k(ranked_ids, truth, k: int) -> float:
    truth = set(truth)
    return 1.0 if any(r in truth for r in ranked_ids[:k]) else 0.0


def reciprocal_rank(ranked_ids, truth) -> float:
    truth = set(truth)
    for i, r in enumerate(ranked_ids):
        if r in truth:
            return 1.0 / (i + 1)
    return 0.0


def ndcg_at_k(ranked_ids, truth, k: int) -> float:
    truth = set(truth)
    dcg = sum(1.0 / math.log2(i + 2) for i, r in enumerate(ranked_ids[:k]) if r in truth)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(truth))))
    return dcg / ideal if ideal > 0 else 0.0


def hits_mrr_ndcg(ranked_ids, truth, k: int):
    """(Hits@k, reciprocal rank, nDCG@k) with binary relevance."""
    if not ranked_ids:
        raise ValueError("ranking must be nonempty")
    return hits_at_k(ranked_ids, truth, k), reciprocal_rank(ranked_ids, truth), ndcg_at_k(ranked_ids, truth, k)


def ancestor_f1(retrieved_topk, ancestors):
    """(precision, recall, F1) of a top-k set against an ancestor set; 0/0 -> 0."""
    retrieved = list(retrieved_topk)
    truth = set(ancestors)
    if not retrieved:
        return 0.0, 0.0, 0.0
    inter = sum(1 for r in retrieved if r in truth)
    precision = inter / len(retrieved)
    recall = inter / len(truth) if truth else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) > 0 else 0.0
    return precision, recall, f1


def indexability_recall(true_topk, candidates, k: int) -> float:
    """|T_k intersect C| / k: how much of the true hyperbolic top-k the
    Euclidean candidate pool recovers."""
    cand = set(candidates)
    return sum(1 for t in list(true_topk)[:k] if t in cand) / k


# ---------------------------------------------------------------------------
# brute-force hyperbolic rankings and the stress sweep
# ---------------------------------------------------------------------------


def hyperbolic_ranking(emb: EmbeddingTable, query_tangents: np.ndarray, k: Optional[int] = None):
    """Exact hyperbolic top-k rows for each query tangent (ties by row)."""
    Q = np.atleast_2d(np.asarray(query_tangents, dtype=np.float64))
    n = len(emb)
    k = n if k is None else min(k, n)
    out = np.empty((Q.shape[0], k), dtype=np.int64)
    chunk = max(1, int(2e7) // max(n, 1))
    rows = np.arange(n)
    for start in range(0, Q.shape[0], chunk):
        D = kernels.tangent_distance_matrix(Q[start : start + chunk], emb.tangents)
        for i in range(D.shape[0]):
            order = np.lexsort((rows, D[i]))
            out[start + i] = order[:k]
    return out


@dataclass
class StressSweepResult:
    radius: float
    dim: int
    k: int
    n_queries: int
    rows: list  # (L, mean recall@k)
    L_th: int

    def recall_at(self, L: int) -> float:
        for row_l, rec in self.rows:
            if row_l == L:
                return rec
        raise KeyError(f"L={L} not in sweep")


def stress_sweep(emb: EmbeddingTable, query_tangents, L_values, k: int = 10, radius: Optional[float] = None):
    """Tangent-only candidate recall against brute-force hyperbolic truth.

    Candidates come from an exact L2 scan over the stored (float32) tangent
    vectors -- no pooling, no reranking -- isolating the geometry distortion.
    """
    Q = np.atleast_2d(np.asarray(query_tangents, dtype=np.float64))
    n = len(emb)
    if n < k:
        raise ValueError(f"corpus of {n} is smaller than k={k}")
    radius = float(radius if radius is not None else (emb.radius_budget or emb.radii().max()))
    idx = build_index((list(range(n)), emb.tangents), metric="l2", kind="exact")
    row_of = {nid: i for i, nid in enumerate(idx.ids)}
    true_rows = hyperbolic_ranking(emb, Q, k=k)
    # full tangent ranking once per query, reused across all L values
    tangent_rows = np.empty((Q.shape[0], n), dtype=np.int64)
    for qi in range(Q.shape[0]):
        hits = idx.search(Q[qi], n)
        tangent_rows[qi] = [row_of[h] for h, _ in hits]
    rows = []
    for L in sorted(set(int(x) for x in L_values)):
        L_eff = min(L, n)
        recallq = []
        for qi in range(Q.shape[0]):
            cand = set(tangent_rows[qi, :L_eff].tolist())
            recallq.append(sum(1 for t in true_rows[qi] if t in cand) / k)
        rows.append((L, float(np.mean(recallq))))
    return StressSweepResult(
        radius=radius,
        dim=emb.dim,
        k=k,
        n_queries=Q.shape[0],
        rows=rows,
        L_th=oversampling_threshold(radius, k),
    )


# ---------------------------------------------------------------------------
# routing risk identity
# ---------------------------------------------------------------------------


@dataclass
class RoutingRiskResult:
    routed_loss: float
    oracle_loss: float
    regret_missed_hierarchy: float
    regret_missed_entity: float
    residual: float


def routing_risk_check(loss_e, loss_h, latent_is_h, predicted_is_h) -> RoutingRiskResult:
    """Decompose routed loss into oracle loss plus misrouting regrets.

    The latent label must mark the geometry with the smaller loss; then
    E[routed] = E[min] + E[Delta_H; Z=H, Zhat=E] + E[Delta_E; Z=E, Zhat=H]
    holds as an algebraic identity and the returned residual is fp noise.
    """
    le = np.asarray(loss_e, dtype=np.float64)
    lh = np.asarray(loss_h, dtype=np.float64)
    z = np.asarray(latent_is_h, dtype=bool)
    zh = np.asarray(predicted_is_h, dtype=bool)
    routed = np.where(zh, lh, le)
    oracle = np.minimum(le, lh)
    regret_h = float(np.mean((le - lh) * (z & ~zh)))
    regret_e = float(np.mean((lh - le) * (~z & zh)))
    lhs = float(np.mean(routed))
    rhs = float(np.mean(oracle)) + regret_h + regret_e
    return RoutingRiskResult(
        routed_loss=lhs,
        oracle_loss=float(np.mean(oracle)),
        regret_missed_hierarchy=regret_h,
        regret_missed_entity=regret_e,
        residual=abs(lhs - rhs),
    )


# ---------------------------------------------------------------------------
# gate metrics
# ---------------------------------------------------------------------------


@dataclass
class GateMetrics:
    accuracy: float
    precision: float
    recall: float
    auc: Optional[float]


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_ranks = ranks[labels[order] == 1]
    n_pos = int(pos_ranks.size)
    n_neg = len(s) - n_pos
    return float((pos_ranks.sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gate_metrics(scores, labels, threshold: float = 0.5) -> GateMetrics:
    """Accuracy/precision/recall at the threshold for the hierarchy class,
    plus tie-averaged rank AUC (absent when only one class is present)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = (scores >= threshold).astype(np.int64)
    accuracy = float(np.mean(pred == labels))
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    auc = None
    if np.unique(labels).size == 2:
        auc = _rank_auc(scores, labels)
    return GateMetrics(accuracy=accuracy, precision=precision, recall=recall, auc=auc)


# ---------------------------------------------------------------------------
# per-family evaluation over a benchmark run
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    per_family: dict = field(default_factory=dict)  # family -> {metric: value}
    per_bucket: dict = field(default_factory=dict)  # (family, bucket) -> {metric: value}
    skipped: int = 0

    def to_rows(self):
        rows = []
        for family in sorted(self.per_family):
            for metric, value in sorted(self.per_family[family].items()):
                rows.append({"family": family, "bucket": "all", "metric": metric, "value": value})
        for (family, bucket) in sorted(self.per_bucket):
            for metric, value in sorted(self.per_bucket[(family, bucket)].items()):
                rows.append({"family": family, "bucket": str(bucket), "metric": metric, "value": value})
        return rows


def evaluate_run(rankings: dict, records, ks=(1, 5, 10), ndcg_k: int = 10, f1_k: int = 10) -> MetricReport:
    """Aggregate metrics per family and per depth bucket.

    rankings maps query_id -> ordered entity ids. Queries with empty truth or
    no ranking are skipped and counted. Ancestor-F1 (macro and micro) is
    computed for the QH-ancestor family at f1_k.
    """
    groups = {}
    report = MetricReport()
    for rec in records:
        ranked = rankings.get(rec.query_id)
        if ranked is None or not rec.truth or not ranked:
            report.skipped += 1
            continue
        groups.setdefault(rec.family, []).append((rec, ranked))
    for family, pairs in groups.items():
        agg = {f"hits@{k}": [] for k in ks}
        agg["mrr"] = []
        agg[f"ndcg@{ndcg_k}"] = []
        micro_inter = 0
        micro_ret = 0
        micro_truth = 0
        macro_f1 = []
        bucket_groups = {}
        for rec, ranked in pairs:
            truth = set(rec.truth)
            for k in ks:
                agg[f"hits@{k}"].append(hits_at_k(ranked, truth, k))
            agg["mrr"].append(reciprocal_rank(ranked, truth))
            agg[f"ndcg@{ndcg_k}"].append(ndcg_at_k(ranked, truth, ndcg_k))
            if family == "QH-ancestor":
                topk = ranked[:f1_k]
                p, r, f1 = ancestor_f1(topk, truth)
                macro_f1.append(f1)
                micro_inter += sum(1 for t in topk if t in truth)
                micro_ret += len(topk)
                micro_truth += len(truth)
            bucket_groups.setdefault(rec.depth_bucket, []).append((rec, ranked))
        stats = {m: float(np.mean(v)) for m, v in agg.items()}
        stats["count"] = float(len(pairs))
        if family == "QH-ancestor" and macro_f1:
            stats["ancestor_f1_macro"] = float(np.mean(macro_f1))
            mp = micro_inter / micro_ret if micro_ret else 0.0
            mr = micro_inter / micro_truth if micro_truth else 0.0
            stats["ancestor_f1_micro"] = 2 * mp * mr / (mp + mr) if (mp + mr) > 0 else 0.0
        report.per_family[family] = stats
        for bucket, bpairs in bucket_groups.items():
            bstats = {}
            for k in ks:
                bstats[f"hits@{k}"] = float(np.mean([hits_at_k(r, set(rec.truth), k) for rec, r in bpairs]))
            bstats["mrr"] = float(np.mean([reciprocal_rank(r, set(rec.truth)) for rec, r in bpairs]))
            bstats["count"] = float(len(bpairs))
            report.per_bucket[(family, bucket)] = bstats
    return report


def retention(report: MetricReport, baseline: MetricReport, family: str = "QE", metric: str = "mrr") -> float:
    """Method-to-baseline MRR ratio on entity queries (the safety-valve measure)."""
    base = baseline.per_family.get(family, {}).get(metric, 0.0)
    ours = report.per_family.get(family, {}).get(metric, 0.0)
    return ours / base if base > 0 else 0.0


# ---------------------------------------------------------------------------
# efficiency probe and theory curves
# ---------------------------------------------------------------------------


def measure_latency_ms(run_query, queries, warmup: int = 100) -> float:
    """Median wall-clock per query in milliseconds (3 decimals), after
    discarding warmup calls; monotonic nanosecond clock."""
    qs = list(queries)
    for q in qs[:warmup]:
        run_query(q)
    times = []
    for q in qs:
        t0 = time.monotonic_ns()
        run_query(q)
        times.append((time.monotonic_ns() - t0) / 1e6)
    return round(float(np.median(times)), 3)


def theory_curve_rows(radii=None, depths=None, branchings=(2, 5, 10), dims=(16, 32, 64)):
    """CSV-ready rows for the distortion curve and required-radius tables."""
    radii = radii if radii is not None else [round(0.1 * i, 1) for i in range(1, 81)]
    depths = depths if depths is not None else list(range(1, 41))
    kappa_rows = [{"R": r, "kappa": kappa(r)} for r in radii]
    radius_rows = []
    for d in dims:
        for b in branchings:
            for D in depths:
                radius_rows.append(
                    {"depth": D, "branching": b, "dim": d, "required_radius": required_radius(D, b, d)}
                )
    return kappa_rows, radius_rows
