"""Training: radius-constrained hyperbolic entity embeddings with origin-chart
tangent updates, the text-alignment adapter, the logistic query gate, and the
flat baselines used by the ablation matrix.

Entities are parameterized by their origin tangent vectors; every gradient
step is a plain Euclidean step on tangent coordinates, with distances
evaluated through the exp map. Optional clipping after each update makes the
radius budget exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kernels
from .encoding import AdapterParams, adapt_tangent, init_adapter
from .geometry import lorentz_exp0
from .ontology import OntologyGraph

CHECKPOINT_FORMAT = "hyemb-v1"


class TrainingDiverged(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    dim: int = 32
    radius_budget: float = 3.0
    lambda_text: float = 1.0
    lambda_radius: float = 10.0
    margin: float = 0.1
    negatives_per_edge: int = 5
    learning_rate: float = 0.05
    epochs: int = 300
    seed: int = 0
    clip_after_step: bool = True
    adapter_variant: str = "linear"
    hard_negatives: bool = False
    init_scale: float = 1e-3

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.radius_budget <= 0:
            raise ValueError("radius budget must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")


@dataclass
class TrainDiagnostics:
    nan_count: int = 0
    inf_count: int = 0
    grad_norm_percentiles: dict = field(default_factory=dict)
    radius_histogram: tuple = ()
    budget_violation_fraction: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    skipped_text_entities: int = 0
    clip_events: int = 0


@dataclass
class EmbeddingTable:
    """Trained entity embeddings, canonically stored as origin tangent vectors."""

    ids: list
    tangents: np.ndarray  # [n, d] float64
    model: str = "lorentz"
    radius_budget: Optional[float] = None

    def __post_init__(self):
        self.row = {nid: i for i, nid in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.tangents.shape[1]

    def tangent(self, nid: str) -> np.ndarray:
        return self.tangents[self.row[nid]]

    def points(self) -> np.ndarray:
        return lorentz_exp0(self.tangents)

    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.tangents, axis=1)


def save_checkpoint(table: EmbeddingTable, path) -> None:
    import json

    header = {
        "format": CHECKPOINT_FORMAT,
        "dim": int(table.dim),
        "R": table.radius_budget,
        "model": table.model,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, nid in enumerate(table.ids):
            fh.write(json.dumps({"id": nid, "tangent": [float(x) for x in table.tangents[i]]}) + "\n")


def load_checkpoint(path) -> EmbeddingTable:
    import json

    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    header = json.loads(lines[0])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format: {header.get('format')!r}")
    ids = []
    tangents = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        ids.append(rec["id"])
        tangents.append(rec["tangent"])
    return EmbeddingTable(
        ids=ids,
        tangents=np.asarray(tangents, dtype=np.float64),
        model=header.get("model", "lorentz"),
        radius_budget=header.get("R"),
    )


# ---------------------------------------------------------------------------
# reference loss functions (single-sample, with analytic gradients)
# ---------------------------------------------------------------------------


def hier_loss_and_grads(u_p, u_c, U_neg, margin: float):
    """Per-edge hierarchy loss and gradients in tangent coordinates.

    loss = d(u_p, u_c) + max(0, margin + |u_p| - |u_c|)
           + sum_n max(0, margin + d(u_p, u_c) - d(u_p, u_n))
    """
    u_p = np.asarray(u_p, dtype=np.float64)
    u_c = np.asarray(u_c, dtype=np.float64)
    U_neg = np.atleast_2d(np.asarray(U_neg, dtype=np.float64))
    stacked = np.concatenate((u_c[None, :], U_neg), axis=0)
    dists, gus, gvs = kernels.pair_distance_grads_np(u_p, stacked)
    d_pc = float(dists[0])
    loss = d_pc
    g_p = gus[0].copy()
    g_c = gvs[0].copy()
    G_neg = np.zeros_like(U_neg)
    rp = float(np.linalg.norm(u_p))
    rc = float(np.linalg.norm(u_c))
    radial = margin + rp - rc
    if radial > 0.0:
        loss += radial
        if rp > 1e-12:
            g_p += u_p / rp
        if rc > 1e-12:
            g_c -= u_c / rc
    for k in range(U_neg.shape[0]):
        h = margin + d_pc - float(dists[1 + k])
        if h > 0.0:
            loss += h
            g_p += gus[0] - gus[1 + k]
            g_c += gvs[0]
            G_neg[k] = -gvs[1 + k]
    return loss, g_p, g_c, G_neg


def text_loss_and_grads(u_v, e_v, adapter: AdapterParams):
    """Alignment loss d_H(x_v, g(e_v)) with gradients for u_v and the adapter."""
    u_v = np.asarray(u_v, dtype=np.float64)
    e_v = np.asarray(e_v, dtype=np.float64)
    t = adapt_tangent(e_v, adapter)
    dists, gus, gvs = kernels.pair_distance_grads_np(u_v, t[None, :])
    loss = float(dists[0])
    g_u = gus[0]
    g_t = gvs[0]
    if adapter.variant == "two-layer":
        pre = adapter.W1 @ e_v + adapter.b1
        hid = np.tanh(pre)
        grads = {
            "W": np.outer(g_t, hid),
            "b": g_t.copy(),
            "W1": np.outer((adapter.W.T @ g_t) * (1.0 - hid * hid), e_v),
            "b1": (adapter.W.T @ g_t) * (1.0 - hid * hid),
        }
    else:
        grads = {"W": np.outer(g_t, e_v), "b": g_t.copy()}
    return loss, g_u, grads


def radius_penalty_and_grads(U, budget: float):
    """Soft budget penalty sum_v max(0, |u_v| - R)^2 and its gradient."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    norms = np.linalg.norm(U, axis=1)
    over = np.maximum(norms - budget, 0.0)
    value = float(np.sum(over * over))
    G = np.zeros_like(U)
    mask = over > 0
    if np.any(mask):
        G[mask] = (2.0 * over[mask] / norms[mask])[:, None] * U[mask]
    return value, G


def gate_loss_and_grads(w, b, E, y):
    """Mean logistic cross-entropy with gradients, in the stable logit form."""
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    z = E @ np.asarray(w, dtype=np.float64) + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    p = 1.0 / (1.0 + np.exp(-z))
    resid = (p - y) / len(y)
    return loss, E.T @ resid, float(np.sum(resid))


# ---------------------------------------------------------------------------
# negative sampling over non-descendants
# ---------------------------------------------------------------------------


def descendant_closure(g: OntologyGraph):
    """id -> set of descendant-or-self ids, via reverse-topological accumulation."""
    from collections import deque

    indeg_out = {nid: len(g.children_map[nid]) for nid in g.nodes}
    queue = deque(nid for nid in g.nodes if indeg_out[nid] == 0)
    desc = {}
    remaining = dict(indeg_out)
    while queue:
        nid = queue.popleft()
        s = {nid}
        for child in g.children_map[nid]:
            s |= desc[child]
        desc[nid] = s
        for parent in g.parents_map[nid]:
            remaining[parent] -= 1
            if remaining[parent] == 0:
                queue.append(parent)
    return desc


def _descendant_keys(g: OntologyGraph, row: dict):
    n = len(row)
    desc = descendant_closure(g)
    keys = []
    cover = np.zeros(n, dtype=np.int64)
    for nid, s in desc.items():
        p = row[nid]
        cover[p] = len(s)
        base = p * n
        keys.extend(base + row[d] for d in s)
    return np.sort(np.asarray(keys, dtype=np.int64)), cover


def sample_negatives(rng, parent_rows, n, n_neg, desc_keys, cover, edge_pool=None):
    """Uniform negatives that are not descendants of the edge's parent.

    Descendant draws are rejected and resampled; edges whose parent covers the
    whole graph get the sentinel -1 (no admissible negative). When edge_pool
    ([n_edges, pool] entity rows) is given, draws come from each edge's
    candidate row instead of uniform.
    """
    E = len(parent_rows)
    if E == 0:
        return np.empty((0, n_neg), dtype=np.int64)

    if edge_pool is None:
        out = rng.integers(0, n, size=(E, n_neg), dtype=np.int64)
    else:
        cols = rng.integers(0, edge_pool.shape[1], size=(E, n_neg), dtype=np.int64)
        out = np.take_along_axis(edge_pool, cols, axis=1)
    impossible = cover[parent_rows] >= n
    for _ in range(200):
        keys = parent_rows[:, None] * n + out
        flat = keys.ravel()
        pos = np.searchsorted(desc_keys, flat)
        pos = np.minimum(pos, desc_keys.size - 1)
        is_desc = (desc_keys[pos] == flat).reshape(E, n_neg)
        bad = is_desc & ~impossible[:, None]
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        if edge_pool is None:
            out[bad] = rng.integers(0, n, size=n_bad, dtype=np.int64)
        else:
            rows_bad = np.nonzero(bad)[0]
            out[bad] = edge_pool[rows_bad, rng.integers(0, edge_pool.shape[1], size=n_bad)]
    else:
        # residual rejects after many rounds: draw from the explicit complement
        keys = parent_rows[:, None] * n + out
        flat = keys.ravel()
        pos = np.minimum(np.searchsorted(desc_keys, flat), desc_keys.size - 1)
        bad = ((desc_keys[pos] == flat).reshape(E, n_neg)) & ~impossible[:, None]
        if np.any(bad):
            all_rows = np.arange(n, dtype=np.int64)
            complements = {}
            for e, k in zip(*np.nonzero(bad)):
                p = int(parent_rows[e])
                if p not in complements:
                    seg = desc_keys[np.searchsorted(desc_keys, p * n): np.searchsorted(desc_keys, (p + 1) * n)] - p * n
                    mask = np.ones(n, dtype=bool)
                    mask[seg] = False
                    complements[p] = all_rows[mask]
                pool = complements[p]
                out[e, k] = pool[rng.integers(0, pool.size)]
    out[impossible] = -1
    return out


def _hard_negative_pool(text_rows, text_matrix, n, pool_size: int = 50):
    """Per-entity candidate pool: the text-nearest entity rows of each entity."""
    X = text_matrix / np.maximum(np.linalg.norm(text_matrix, axis=1, keepdims=True), 1e-12)
    sims = X @ X.T
    np.fill_diagonal(sims, -np.inf)
    k = min(pool_size, X.shape[0] - 1)
    top = np.argpartition(-sims, k - 1, axis=1)[:, :k]
    pool = np.tile(np.arange(k, dtype=np.int64), (n, 1))
    pool[text_rows] = text_rows[top]
    return pool


# ---------------------------------------------------------------------------
# the trainer
# ---------------------------------------------------------------------------


def train_embeddings(g: OntologyGraph, text_table: Optional[dict], cfg: TrainConfig):
    """Joint training of entity tangents and the adapter; returns
    (EmbeddingTable, AdapterParams | None, TrainDiagnostics).
    """
    ids = sorted(g.nodes)
    n = len(ids)
    if n == 0:
        raise ValueError("graph is empty")
    row = {nid: i for i, nid in enumerate(ids)}
    rng = np.random.default_rng(cfg.seed)
    U = rng.normal(scale=cfg.init_scale, size=(n, cfg.dim))

    edges = sorted((row[p], row[c]) for c, p in g.isa_edges)
    parent_rows = np.asarray([p for p, _ in edges], dtype=np.int64)
    child_rows = np.asarray([c for _, c in edges], dtype=np.int64)
    desc_keys, cover = _descendant_keys(g, row)

    adapter = None
    text_rows = np.empty(0, dtype=np.int64)
    E_txt = np.empty((0, 1))
    skipped = 0
    if text_table:
        have = [nid for nid in ids if nid in text_table]
        skipped = n - len(have)
        if have:
            de = len(text_table[have[0]])
            text_rows = np.asarray([row[nid] for nid in have], dtype=np.int64)
            E_txt = np.ascontiguousarray([text_table[nid] for nid in have], dtype=np.float64)
            adapter = init_adapter(cfg.dim, de, cfg.adapter_variant, seed=int(rng.integers(2**31)))

    edge_pool = None
    if cfg.hard_negatives and text_rows.size:
        edge_pool = _hard_negative_pool(text_rows, E_txt, n)[child_rows]

    diag = TrainDiagnostics(skipped_text_entities=skipped)
    hier_gn = np.zeros(len(edges))
    text_gn = np.zeros(text_rows.size)
    budget = float(cfg.radius_budget)
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        if len(edges):
            negs = sample_negatives(rng, parent_rows, n, cfg.negatives_per_edge, desc_keys, cover, edge_pool)
            hier_loss, clips = kernels.hier_epoch(
                U, parent_rows, child_rows, negs, cfg.margin, cfg.learning_rate, budget, cfg.clip_after_step, hier_gn
            )
            diag.clip_events += int(clips)
            epoch_loss += hier_loss
        if adapter is not None and cfg.lambda_text > 0.0:
            text_loss, clips = kernels.text_epoch(
                U, E_txt, text_rows, adapter.arrays(), cfg.lambda_text, cfg.learning_rate, budget, cfg.clip_after_step, text_gn
            )
            diag.clip_events += int(clips)
            epoch_loss += cfg.lambda_text * text_loss
        if cfg.lambda_radius > 0.0:
            pen, G = radius_penalty_and_grads(U, budget)
            if pen > 0.0:
                U -= cfg.learning_rate * cfg.lambda_radius * G
            epoch_loss += cfg.lambda_radius * pen
        if not math.isfinite(epoch_loss):
            diag.nan_count = int(np.isnan(U).sum())
            diag.inf_count = int(np.isinf(U).sum())
            _finalize_diagnostics(diag, U, budget, hier_gn, text_gn)
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", diagnostics=diag)
        diag.epoch_losses.append(float(epoch_loss))
        norms = np.linalg.norm(U, axis=1)
        diag.budget_violation_fraction.append(float(np.mean(norms > budget + 1e-6)))
    diag.nan_count = int(np.isnan(U).sum())
    diag.inf_count = int(np.isinf(U).sum())
    _finalize_diagnostics(diag, U, budget, hier_gn, text_gn)
    table = EmbeddingTable(ids=ids, tangents=U, model="lorentz", radius_budget=budget)
    return table, adapter, diag


def _finalize_diagnostics(diag, U, budget, hier_gn, text_gn):
    gn = np.concatenate([hier_gn, text_gn]) if text_gn.size else hier_gn
    if gn.size:
        diag.grad_norm_percentiles = {
            "p50": float(np.percentile(gn, 50)),
            "p90": float(np.percentile(gn, 90)),
            "p99": float(np.percentile(gn, 99)),
            "max": float(gn.max()),
        }
    norms = np.linalg.norm(U, axis=1)
    hi = max(budget * 1.5, float(norms.max()) + 1e-9)
    counts, edges = np.histogram(norms, bins=20, range=(0.0, hi))
    diag.radius_histogram = (counts.tolist(), edges.tolist())


# ---------------------------------------------------------------------------
# query gate
# ---------------------------------------------------------------------------

RULE_KEYWORDS = (
    "subtypes",
    "parent",
    "ancestor",
    "descendant",
    "broader",
    "children",
    "siblings",
    "specificity",
)


def rule_gate(query_text: str) -> int:
    """1 if the text contains any hierarchy keyword, else 0."""
    low = query_text.lower()
    return 1 if any(kw in low for kw in RULE_KEYWORDS) else 0


@dataclass
class GateParams:
    """Query gate emitting the mixing weight alpha(q) in (0, 1)."""

    variant: str
    w: Optional[np.ndarray] = None
    b: float = 0.0
    W1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None

    def logits(self, E: np.ndarray) -> np.ndarray:
        E = np.atleast_2d(np.asarray(E, dtype=np.float64))
        if self.variant == "two-layer":
            hid = np.tanh(E @ self.W1.T + self.b1)
            return hid @ self.w2 + self.b
        return E @ self.w + self.b

    def alpha(self, e) -> float:
        # exp overflow at saturated logits still yields the correct 0.0/1.0
        with np.errstate(over="ignore"):
            return float(1.0 / (1.0 + np.exp(-self.logits(e)[0])))

    def alpha_batch(self, E) -> np.ndarray:
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-self.logits(E)))


def train_gate(E, labels, variant: str = "linear", seed: int = 0, learning_rate: float = 20.0, epochs: int = 3000) -> GateParams:
    """Fit the gate as a binary classifier (label 1 = hierarchy-navigation)
    with full-batch gradient descent on cross-entropy; deterministic.

    The defaults run long enough to saturate the sigmoid on separable
    template queries; an unsaturated gate leaks hyperbolic score into
    entity-centric rankings through the mixing weight."""
    E = np.atleast_2d(np.asarray(E, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("gate training needs both classes present")
    m, de = E.shape
    rng = np.random.default_rng(seed)
    if variant == "linear":
        w = np.zeros(de)
        b = 0.0
        for _ in range(epochs):
            _, gw, gb = gate_loss_and_grads(w, b, E, y)
            w -= learning_rate * gw
            b -= learning_rate * gb
        return GateParams(variant="linear", w=w, b=b)
    if variant == "two-layer":
        hidden = 16
        W1 = rng.normal(scale=0.1, size=(hidden, de))
        b1 = np.zeros(hidden)
        w2 = rng.normal(scale=0.1, size=hidden)
        b = 0.0
        for _ in range(epochs):
            pre = E @ W1.T + b1
            hid = np.tanh(pre)
            z = hid @ w2 + b
            p = 1.0 / (1.0 + np.exp(-z))
            resid = (p - y) / m
            gw2 = hid.T @ resid
            gb = float(np.sum(resid))
            ghid = np.outer(resid, w2) * (1.0 - hid * hid)
            gW1 = ghid.T @ E
            gb1 = ghid.sum(axis=0)
            W1 -= learning_rate * gW1
            b1 -= learning_rate * gb1
            w2 -= learning_rate * gw2
            b -= learning_rate * gb
        return GateParams(variant="two-layer", W1=W1, b1=b1, w2=w2, b=b)
    raise ValueError(f"unknown gate variant {variant!r}")


# ---------------------------------------------------------------------------
# flat baselines
# ---------------------------------------------------------------------------


def train_kg_baseline(g: OntologyGraph, text_table: Optional[dict], cfg: TrainConfig, margin: float = 1.0):
    """Translational flat-space baseline: margin ranking on |v_p + t - v_c|^2
    with the same negative sampler and dimensions. Returns
    (EmbeddingTable(model="euclidean"), translation vector, AdapterParams | None).

    The text adapter is fit afterwards by least squares onto the trained
    vectors so queries can be mapped into the structural space.
    """
    ids = sorted(g.nodes)
    n = len(ids)
    row = {nid: i for i, nid in enumerate(ids)}
    rng = np.random.default_rng(cfg.seed)
    V = rng.normal(scale=0.1, size=(n, cfg.dim))
    trans = rng.normal(scale=0.1, size=cfg.dim)
    edges = sorted((row[p], row[c]) for c, p in g.isa_edges)
    parent_rows = np.asarray([p for p, _ in edges], dtype=np.int64)
    child_rows = np.asarray([c for _, c in edges], dtype=np.int64)
    desc_keys, cover = _descendant_keys(g, row)
    for _ in range(cfg.epochs):
        if not len(edges):
            break
        negs = sample_negatives(rng, parent_rows, n, cfg.negatives_per_edge, desc_keys, cover)
        kernels.kg_epoch(V, trans, parent_rows, child_rows, negs, margin, cfg.learning_rate)
    table = EmbeddingTable(ids=ids, tangents=V, model="euclidean", radius_budget=None)
    adapter = None
    if text_table:
        have = [nid for nid in ids if nid in text_table]
        if have:
            E = np.asarray([text_table[nid] for nid in have], dtype=np.float64)
            Y = np.asarray([V[row[nid]] for nid in have])
            ones = np.ones((E.shape[0], 1))
            sol, *_ = np.linalg.lstsq(np.hstack([E, ones]), Y, rcond=None)
            adapter = AdapterParams(variant="linear", W=sol[:-1].T.copy(), b=sol[-1].copy())
    return table, trans, adapter
