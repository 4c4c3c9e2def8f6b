"""The query pipeline: encode, adapt, pooled candidate generation, exact
hyperbolic reranking with the gate-controlled mixed score, and temperature
calibration.

score(v|q) = alpha * s_H/tau_H + (1 - alpha) * s_E/tau_E with
s_H = -d_H(x_q, x_v) and s_E = cos(e_q, e_v). Mode overrides pin alpha at the
extremes; hard routing thresholds the gate at 0.5.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as kernels
from .encoding import AdapterParams, adapt_tangent
from .training import EmbeddingTable, GateParams, rule_gate

logger = logging.getLogger(__name__)

MODES = ("euclidean-only", "hyperbolic-only", "no-gate", "hard-route", "soft-mix")


class RuleGate:
    """Keyword gate: alpha is 1 when the query text names a hierarchy relation."""

    def alpha_text(self, text: str) -> float:
        return float(rule_gate(text))


@dataclass
class RetrievalConfig:
    k: int = 10
    L_H: int = 50
    L_E: int = 50
    mode: str = "soft-mix"
    pool_text_candidates: bool = True
    tau_E: float = 1.0
    tau_H: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.k < 1 or self.L_H < 1 or self.L_E < 1:
            raise ValueError("k, L_H, L_E must be >= 1")
        if self.tau_E <= 0 or self.tau_H <= 0:
            raise ValueError("temperatures must be positive")
        pool = self.L_H + (self.L_E if self.pool_text_candidates else 0)
        if self.k > pool:
            raise ValueError(f"k={self.k} exceeds the candidate budget L_H+L_E={pool}")


@dataclass
class ScoredCandidate:
    id: str
    s_E: float
    s_H: float
    score: float
    from_tangent: bool
    from_text: bool

    @property
    def provenance(self) -> str:
        if self.from_tangent and self.from_text:
            return "both"
        return "tangent" if self.from_tangent else "text"


@dataclass
class RankedResult:
    query_id: str
    alpha: float
    candidates: list = field(default_factory=list)
    warning: Optional[str] = None

    def ids(self) -> list:
        return [c.id for c in self.candidates]

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "query_id": self.query_id,
                "alpha": self.alpha,
                "results": [
                    {
                        "id": c.id,
                        "s_E": c.s_E,
                        "s_H": c.s_H,
                        "score": c.score,
                        "provenance": c.provenance,
                    }
                    for c in self.candidates
                ],
            },
            sort_keys=True,
        )


def canonical_entity_id(index_id: str) -> str:
    """Strip the alias suffix used for synonym entries in the text index."""
    return index_id.split("#", 1)[0]


def pool_candidates(tangent_hits, text_hits):
    """Union of the two candidate lists with provenance flags.

    Inputs are (id, distance) lists; text-index ids may be synonym aliases and
    are canonicalized. Returns {entity_id: [from_tangent, from_text]} in
    first-seen order.
    """
    pool = {}
    for cid, _ in tangent_hits:
        cid = canonical_entity_id(cid)
        if cid not in pool:
            pool[cid] = [True, False]
    for cid, _ in text_hits:
        cid = canonical_entity_id(cid)
        if cid in pool:
            pool[cid][1] = True
        else:
            pool[cid] = [False, True]
    return pool


def calibrate_temperatures(positive_pairs, emb: EmbeddingTable):
    """tau_E = 1; tau_H = median hyperbolic parent-child distance, so the
    median positive pair scores -1 after scaling. Empty input falls back to
    (1, 1) with a warning."""
    if not positive_pairs:
        logger.warning("temperature calibration got no positive pairs; using (1, 1)")
        return 1.0, 1.0
    P = np.stack([emb.tangent(p) for p, _ in positive_pairs])
    C = np.stack([emb.tangent(c) for _, c in positive_pairs])
    d = kernels.tangent_pair_distances(P, C)
    tau_h = float(np.median(d))
    if tau_h <= 0:
        tau_h = 1.0
    return 1.0, tau_h


class Retriever:
    """Read-only query pipeline over built artifacts."""

    def __init__(
        self,
        emb: EmbeddingTable,
        adapter: AdapterParams,
        tangent_index,
        text_index=None,
        text_vectors: Optional[dict] = None,
        encoder=None,
        gate=None,
    ):
        self.emb = emb
        self.adapter = adapter
        self.tangent_index = tangent_index
        self.text_index = text_index
        self.encoder = encoder
        self.gate = gate
        self._unit_text = {}
        if text_vectors:
            for nid, vec in text_vectors.items():
                v = np.asarray(vec, dtype=np.float64)
                n = np.linalg.norm(v)
                self._unit_text[nid] = v / n if n > 0 else v

    def _alpha(self, cfg: RetrievalConfig, e_q, query_text) -> float:
        if cfg.mode == "euclidean-only":
            return 0.0
        if cfg.mode in ("hyperbolic-only", "no-gate"):
            return 1.0
        if self.gate is None:
            raise ValueError(f"mode {cfg.mode!r} requires a gate")
        if isinstance(self.gate, RuleGate):
            if query_text is None:
                raise ValueError("rule gate requires the query text")
            a = self.gate.alpha_text(query_text)
        else:
            a = self.gate.alpha(e_q)
        if cfg.mode == "hard-route":
            return 1.0 if a >= 0.5 else 0.0
        return a

    def retrieve(self, query_text: str, cfg: RetrievalConfig, query_id: str = "q") -> RankedResult:
        if self.encoder is None:
            raise ValueError("retriever has no encoder; use retrieve_encoded")
        e_q = self.encoder.encode(query_text)
        return self.retrieve_encoded(e_q, cfg, query_id=query_id, query_text=query_text)

    def retrieve_encoded(
        self, e_q: np.ndarray, cfg: RetrievalConfig, query_id: str = "q", query_text: Optional[str] = None
    ) -> RankedResult:
        if cfg.k > len(self.emb.ids):
            raise ValueError(f"k={cfg.k} exceeds the corpus size {len(self.emb.ids)}")
        e_q = np.asarray(e_q, dtype=np.float64)
        u_q = adapt_tangent(e_q, self.adapter)
        alpha = self._alpha(cfg, e_q, query_text)
        tangent_hits = self.tangent_index.search(u_q, cfg.L_H)
        text_hits = []
        if cfg.pool_text_candidates and self.text_index is not None:
            text_hits = self.text_index.search(e_q, cfg.L_E)
        pool = pool_candidates(tangent_hits, text_hits)
        if not pool:
            logger.warning("query %s produced an empty candidate pool", query_id)
            return RankedResult(query_id=query_id, alpha=alpha, candidates=[], warning="empty candidate pool")
        cand_ids = list(pool)
        U_cand = np.stack([self.emb.tangent(cid) for cid in cand_ids])
        d_h = kernels.tangent_distance_matrix(u_q[None, :], U_cand)[0]
        nq = np.linalg.norm(e_q)
        eq_unit = e_q / nq if nq > 0 else e_q
        scored = []
        for i, cid in enumerate(cand_ids):
            s_h = -float(d_h[i])
            ev = self._unit_text.get(cid)
            s_e = float(eq_unit @ ev) if ev is not None else 0.0
            score = alpha * (s_h / cfg.tau_H) + (1.0 - alpha) * (s_e / cfg.tau_E)
            flags = pool[cid]
            scored.append(ScoredCandidate(cid, s_e, s_h, score, flags[0], flags[1]))
        scored.sort(key=lambda c: (-c.score, c.id))
        return RankedResult(query_id=query_id, alpha=alpha, candidates=scored[: cfg.k])
