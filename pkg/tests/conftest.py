"""Shared fixtures. The session-scoped desk pipeline (5k-node synthetic
ontology, trained end to end at the default configuration) backs the heavy
acceptance criteria; unit tests use their own small fixtures.
"""
from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from hypret.benchmark import gen_queries
from hypret.encoding import HashingEncoder, entity_text
from hypret.index import build_index
from hypret.ontology import sample_subset, synth_bary
from hypret.retrieval import Retriever, calibrate_temperatures
from hypret.training import TrainConfig, train_embeddings, train_gate


@pytest.fixture(scope="session")
def desk():
    """5000-node subset of a synthetic hierarchy, trained at spec defaults
    (d=32, R=3, 300 epochs), with benchmark, gate, indexes, and retriever."""
    g_full = synth_bary(6, 4, seed=11)
    g = sample_subset(g_full, 5000, seed=0)
    encoder = HashingEncoder(dim=128, seed=0)
    text_vectors = {nid: encoder.encode(entity_text(node)) for nid, node in g.nodes.items()}
    cfg = TrainConfig(seed=0)
    table, adapter, diag = train_embeddings(g, text_vectors, cfg)

    records = gen_queries(g, seed=5)
    train_labeled = [r for r in records if r.split == "train" and r.gate_label in ("H", "E")]
    E_train = np.stack([encoder.encode(r.text) for r in train_labeled])
    y_train = np.array([1 if r.gate_label == "H" else 0 for r in train_labeled])
    gate = train_gate(E_train, y_train, variant="linear", seed=0)

    tangent_index = build_index((table.ids, table.tangents), metric="l2", kind="exact")
    text_table = dict(text_vectors)
    for nid, node in g.nodes.items():
        if node.synonyms:
            text_table[f"{nid}#syn"] = encoder.encode(node.synonyms[0])
    text_index = build_index(text_table, metric="cosine", kind="exact")

    val_entities = {r.source_id for r in records if r.split == "val"}
    pairs = [(p, c) for c, p in g.isa_edges if c in val_entities]
    tau_e, tau_h = calibrate_temperatures(pairs, table)

    retriever = Retriever(
        table,
        adapter,
        tangent_index,
        text_index=text_index,
        text_vectors=text_vectors,
        encoder=encoder,
        gate=gate,
    )
    return SimpleNamespace(
        graph=g,
        cfg=cfg,
        table=table,
        adapter=adapter,
        diagnostics=diag,
        records=records,
        encoder=encoder,
        text_vectors=text_vectors,
        gate=gate,
        tangent_index=tangent_index,
        text_index=text_index,
        tau=(tau_e, tau_h),
        retriever=retriever,
    )
