"""Command-line pipeline: ingest/synth an ontology, generate the benchmark,
train embeddings and the gate, build indexes, query, evaluate, and run the
stress test and ablation matrix.

Every stage is deterministic given (config, seed): one master seed is fanned
out per stage by stable hashing. Stages are resumable; re-running with
unchanged inputs is a checksum-verified no-op unless --force. A resolved
config snapshot is written next to each stage's outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from .benchmark import GenCaps, QueryRecord, gen_queries, load_benchmark, perturb_embedding, save_benchmark
from .encoding import AdapterParams, HashingEncoder, adapt_tangent, entity_text, load_embeddings
from .geometry import kappa, required_radius
from .index import build_index, index_nbytes, load_index, save_index
from .ontology import (
    OntologyGraph,
    graph_checksum,
    graph_stats,
    load_graph_jsonl,
    parse_obo,
    sample_subset,
    save_graph_jsonl,
    synth_bary,
)
from .retrieval import RetrievalConfig, Retriever, RuleGate, calibrate_temperatures
from .training import (
    EmbeddingTable,
    GateParams,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_embeddings,
    train_gate,
    train_kg_baseline,
)


class StaleArtifactError(RuntimeError):
    pass


def stage_seed(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**31)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(workdir: Path, stage: str) -> Path:
    return workdir / "manifests" / f"{stage}.json"


def _write_manifest(workdir: Path, stage: str, inputs, config: dict, outputs) -> None:
    man = {
        "stage": stage,
        "config": config,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    path = _manifest_path(workdir, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(man, sort_keys=True, indent=1))


def _manifest_matches(workdir: Path, stage: str, inputs, config: dict) -> bool:
    path = _manifest_path(workdir, stage)
    if not path.exists():
        return False
    man = json.loads(path.read_text())
    if man.get("config") != config:
        return False
    recorded = man.get("inputs", {})
    current = {str(p): _sha256(Path(p)) for p in inputs if Path(p).exists()}
    if set(recorded) != set(current) or any(recorded[k] != current[k] for k in recorded):
        return False
    return all(Path(p).exists() for p in man.get("outputs", []))


def assert_fresh(workdir: Path, stage: str) -> None:
    """Verify a prior stage's recorded input checksums still hold."""
    path = _manifest_path(workdir, stage)
    if not path.exists():
        return
    man = json.loads(path.read_text())
    for p, sha in man.get("inputs", {}).items():
        if not Path(p).exists() or _sha256(Path(p)) != sha:
            raise StaleArtifactError(
                f"stale artifact: stage '{stage}' was built from {p}, which has changed; rerun '{stage}'"
            )


def _snapshot_config(workdir: Path, stage: str, config: dict) -> None:
    (workdir / f"config.{stage}.json").write_text(json.dumps(config, sort_keys=True, indent=1) + "\n")


def _resolve(cli_value, name: str, config: dict, default):
    if cli_value is not None:
        return cli_value
    env = os.environ.get(f"HYPRET_{name.upper().replace('-', '_')}")
    if env is not None:
        if isinstance(default, bool):
            return env.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(env)
        if isinstance(default, float):
            return float(env)
        return env
    if name in config:
        return config[name]
    return default


# ---------------------------------------------------------------------------
# shared artifact helpers
# ---------------------------------------------------------------------------


def _load_config_file(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _save_adapter(adapter: AdapterParams, path: Path) -> None:
    rec = {"variant": adapter.variant, "W": adapter.W.tolist(), "b": adapter.b.tolist()}
    if adapter.variant == "two-layer":
        rec["W1"] = adapter.W1.tolist()
        rec["b1"] = adapter.b1.tolist()
    path.write_text(json.dumps(rec))


def _load_adapter(path: Path) -> AdapterParams:
    rec = json.loads(path.read_text())
    return AdapterParams(
        variant=rec["variant"],
        W=np.asarray(rec["W"], dtype=np.float64),
        b=np.asarray(rec["b"], dtype=np.float64),
        W1=np.asarray(rec["W1"], dtype=np.float64) if "W1" in rec else None,
        b1=np.asarray(rec["b1"], dtype=np.float64) if "b1" in rec else None,
    )


def _save_gate(gate, path: Path) -> None:
    if isinstance(gate, RuleGate):
        path.write_text(json.dumps({"variant": "rule"}))
        return
    rec = {"variant": gate.variant, "b": gate.b}
    if gate.variant == "linear":
        rec["w"] = gate.w.tolist()
    else:
        rec["W1"] = gate.W1.tolist()
        rec["b1"] = gate.b1.tolist()
        rec["w2"] = gate.w2.tolist()
    path.write_text(json.dumps(rec))


def _load_gate(path: Path):
    rec = json.loads(path.read_text())
    if rec["variant"] == "rule":
        return RuleGate()
    if rec["variant"] == "linear":
        return GateParams(variant="linear", w=np.asarray(rec["w"]), b=float(rec["b"]))
    return GateParams(
        variant="two-layer",
        W1=np.asarray(rec["W1"]),
        b1=np.asarray(rec["b1"]),
        w2=np.asarray(rec["w2"]),
        b=float(rec["b"]),
    )


def _entity_text_vectors(g: OntologyGraph, encoder_spec, workdir: Path):
    """Primary text vector per entity (label + first definition sentence)."""
    if encoder_spec["kind"] == "hash":
        enc = HashingEncoder(dim=encoder_spec["dim"], seed=encoder_spec["seed"])
        return {nid: enc.encode(entity_text(node)) for nid, node in g.nodes.items()}
    table, _ = load_embeddings(encoder_spec["path"])
    return {nid: table[nid] for nid in g.nodes if nid in table}


def _query_vector(encoder_spec, text: str, query_id=None, query_table=None):
    if encoder_spec["kind"] == "hash":
        enc = HashingEncoder(dim=encoder_spec["dim"], seed=encoder_spec["seed"])
        return enc.encode(text)
    if query_table is None or query_id not in query_table:
        raise ValueError(f"precomputed encoder has no vector for query {query_id!r}")
    return query_table[query_id]


def _build_retriever(workdir: Path, g: OntologyGraph, mode_gate: bool = True) -> tuple:
    emb = load_checkpoint(workdir / "embeddings.jsonl")
    adapter = _load_adapter(workdir / "adapter.json")
    tangent_index = load_index(workdir / "tangent.hyix")
    text_index_path = workdir / "text.hyix"
    text_index = load_index(text_index_path) if text_index_path.exists() else None
    encoder_spec = json.loads((workdir / "encoder.json").read_text())
    text_vectors = _entity_text_vectors(g, encoder_spec, workdir)
    gate_path = workdir / "gate.json"
    gate = _load_gate(gate_path) if (mode_gate and gate_path.exists()) else None
    encoder = HashingEncoder(dim=encoder_spec["dim"], seed=encoder_spec["seed"]) if encoder_spec["kind"] == "hash" else None
    retriever = Retriever(
        emb,
        adapter,
        tangent_index,
        text_index=text_index,
        text_vectors=text_vectors,
        encoder=encoder,
        gate=gate,
    )
    return retriever, encoder_spec, emb


def _temperatures(workdir: Path):
    path = workdir / "temperatures.json"
    if path.exists():
        rec = json.loads(path.read_text())
        return float(rec["tau_E"]), float(rec["tau_H"])
    return 1.0, 1.0


def _retrieval_config(args, config, mode=None, pool=None, tau=None):
    tau_e, tau_h = tau if tau is not None else (1.0, 1.0)
    return RetrievalConfig(
        k=_resolve(getattr(args, "k", None), "k", config, 10),
        L_H=_resolve(getattr(args, "l_h", None), "L_H", config, 50),
        L_E=_resolve(getattr(args, "l_e", None), "L_E", config, 50),
        mode=mode or _resolve(getattr(args, "mode", None), "mode", config, "soft-mix"),
        pool_text_candidates=pool if pool is not None else not getattr(args, "no_pool", False),
        tau_E=tau_e,
        tau_H=tau_h,
    )


def _rank_benchmark(retriever, records, cfg: RetrievalConfig, encoder_spec, query_table=None, perturb=None):
    """ranked ids per query_id, in deterministic sorted-query order."""
    rankings = {}
    for rec in sorted(records, key=lambda r: r.query_id):
        e_q = _query_vector(encoder_spec, rec.text, rec.query_id, query_table)
        if perturb is not None:
            sigma, seed = perturb
            e_q = perturb_embedding(e_q, sigma, seed=stage_seed(seed, rec.query_id))
        result = retriever.retrieve_encoded(e_q, cfg, query_id=rec.query_id, query_text=rec.text)
        rankings[rec.query_id] = result.ids()
    return rankings


def _write_csv(path: Path, rows, fieldnames) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    workdir.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else workdir / "graph.jsonl"
    stage_cfg = {"obo": str(args.obo), "output": str(out)}
    if not args.force and _manifest_matches(workdir, "ingest", [args.obo], stage_cfg):
        print(f"ingest: up to date ({out})")
        return 0
    with open(args.obo, "r", encoding="utf-8") as fh:
        g = parse_obo(fh)
    if g.dangling:
        print(f"ingest: {len(g.dangling)} dangling is_a targets (kept as warnings)", file=sys.stderr)
    save_graph_jsonl(g, out)
    stats = graph_stats(g)
    print(f"ingest: {stats.node_count} nodes, {stats.edge_count} edges, max depth {stats.max_depth}")
    _snapshot_config(workdir, "ingest", stage_cfg)
    _write_manifest(workdir, "ingest", [args.obo], stage_cfg, [out])
    return 0


def cmd_synth(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    workdir.mkdir(parents=True, exist_ok=True)
    out = Path(args.output) if args.output else workdir / "graph.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    seed = stage_seed(master, "synth")
    stage_cfg = {"depth": args.depth, "branch": args.branch, "seed": seed, "output": str(out)}
    if not args.force and _manifest_matches(workdir, "synth", [], stage_cfg):
        print(f"synth: up to date ({out})")
        return 0
    g = synth_bary(args.depth, args.branch, seed=seed)
    save_graph_jsonl(g, out)
    stats = graph_stats(g)
    print(f"synth: {stats.node_count} nodes, depth {stats.max_depth}, branching {stats.avg_branching:.2f}")
    _snapshot_config(workdir, "synth", stage_cfg)
    _write_manifest(workdir, "synth", [], stage_cfg, [out])
    return 0


def cmd_subset(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    workdir.mkdir(parents=True, exist_ok=True)
    src = Path(args.input) if args.input else workdir / "graph.jsonl"
    out = Path(args.output) if args.output else workdir / "graph.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    seed = stage_seed(master, "subset")
    stage_cfg = {"input": str(src), "target": args.target, "seed": seed, "output": str(out)}
    if not args.force and _manifest_matches(workdir, "subset", [src], stage_cfg):
        print(f"subset: up to date ({out})")
        return 0
    g = load_graph_jsonl(src)
    sub = sample_subset(g, args.target, seed=seed)
    save_graph_jsonl(sub, out)
    stats = graph_stats(sub)
    print(
        f"subset: {stats.node_count} nodes, {stats.edge_count} edges, "
        f"max depth {stats.max_depth}, branching {stats.avg_branching:.2f}"
    )
    _snapshot_config(workdir, "subset", stage_cfg)
    _write_manifest(workdir, "subset", [src], stage_cfg, [out])
    return 0


def cmd_gen_queries(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    out = workdir / "queries.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    seed = stage_seed(master, "gen-queries")
    boundaries = None
    if args.bucket_bounds:
        boundaries = []
        for part in args.bucket_bounds.split(","):
            lo, _, hi = part.partition("-")
            boundaries.append((int(lo), int(hi or lo)))
    stage_cfg = {
        "graph": str(graph_path),
        "seed": seed,
        "qe": args.qe,
        "qh": args.qh,
        "qm": args.qm,
        "buckets": args.buckets,
        "bucket_bounds": args.bucket_bounds,
    }
    if not args.force and _manifest_matches(workdir, "gen-queries", [graph_path], stage_cfg):
        print(f"gen-queries: up to date ({out})")
        return 0
    g = load_graph_jsonl(graph_path)
    records = gen_queries(
        g,
        seed=seed,
        caps=GenCaps(qe=args.qe, qh=args.qh, qm=args.qm),
        bucket_count=args.buckets,
        bucket_boundaries=boundaries,
    )
    save_benchmark(records, out, g=g, seed=seed)
    fam_counts = {}
    for r in records:
        fam_counts[r.family] = fam_counts.get(r.family, 0) + 1
    print(f"gen-queries: {len(records)} queries " + json.dumps(fam_counts, sort_keys=True))
    _snapshot_config(workdir, "gen-queries", stage_cfg)
    _write_manifest(workdir, "gen-queries", [graph_path], stage_cfg, [out])
    return 0


def _train_config_from_args(args, config, seed) -> TrainConfig:
    return TrainConfig(
        dim=_resolve(args.dim, "dim", config, 32),
        radius_budget=_resolve(args.radius, "radius", config, 3.0),
        lambda_text=_resolve(args.lambda_text, "lambda_text", config, 1.0),
        lambda_radius=0.0 if args.no_radius_control else _resolve(args.lambda_radius, "lambda_radius", config, 10.0),
        margin=_resolve(args.margin, "margin", config, 0.1),
        negatives_per_edge=_resolve(args.negatives, "negatives", config, 5),
        learning_rate=_resolve(args.learning_rate, "learning_rate", config, 0.05),
        epochs=_resolve(args.epochs, "epochs", config, 300),
        seed=seed,
        clip_after_step=not args.no_radius_control,
        adapter_variant=_resolve(args.adapter, "adapter", config, "linear"),
        hard_negatives=args.hard_negatives,
    )


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    seed = stage_seed(master, "train")
    cfg = _train_config_from_args(args, config, seed)
    encoder_spec = {
        "kind": "precomputed" if args.embeddings else "hash",
        "dim": _resolve(args.encoder_dim, "encoder_dim", config, 128),
        "seed": stage_seed(master, "encoder"),
    }
    if args.embeddings:
        encoder_spec["path"] = str(args.embeddings)
    stage_cfg = {"graph": str(graph_path), "train": cfg.__dict__, "encoder": encoder_spec}
    inputs = [graph_path] + ([Path(args.embeddings)] if args.embeddings else [])
    outputs = [workdir / "embeddings.jsonl", workdir / "adapter.json", workdir / "encoder.json", workdir / "diagnostics.json"]
    if not args.force and _manifest_matches(workdir, "train", inputs, stage_cfg):
        print("train: up to date")
        return 0
    g = load_graph_jsonl(graph_path)
    (workdir / "encoder.json").write_text(json.dumps(encoder_spec, sort_keys=True))
    text_vectors = _entity_text_vectors(g, encoder_spec, workdir)
    table, adapter, diag = train_embeddings(g, text_vectors, cfg)
    save_checkpoint(table, workdir / "embeddings.jsonl")
    if adapter is not None:
        _save_adapter(adapter, workdir / "adapter.json")
    diag_rec = {
        "nan_count": diag.nan_count,
        "inf_count": diag.inf_count,
        "grad_norm_percentiles": diag.grad_norm_percentiles,
        "radius_histogram": diag.radius_histogram,
        "budget_violation_fraction": diag.budget_violation_fraction[-1] if diag.budget_violation_fraction else None,
        "final_loss": diag.epoch_losses[-1] if diag.epoch_losses else None,
        "clip_events": diag.clip_events,
        "skipped_text_entities": diag.skipped_text_entities,
        "max_radius": float(table.radii().max()),
    }
    (workdir / "diagnostics.json").write_text(json.dumps(diag_rec, sort_keys=True, indent=1))
    print(
        f"train: {len(table)} entities, dim {cfg.dim}, final loss {diag.epoch_losses[-1]:.4f}, "
        f"max radius {table.radii().max():.4f}, nan_count {diag.nan_count}"
    )
    _snapshot_config(workdir, "train", stage_cfg)
    _write_manifest(workdir, "train", inputs, stage_cfg, outputs)
    return 0


def cmd_gate_train(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    queries_path = workdir / "queries.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    seed = stage_seed(master, "gate-train")
    stage_cfg = {"variant": args.variant, "seed": seed, "split": args.split}
    out = workdir / "gate.json"
    if not args.force and _manifest_matches(workdir, "gate-train", [queries_path], stage_cfg):
        print("gate-train: up to date")
        return 0
    if args.variant == "rule":
        _save_gate(RuleGate(), out)
        print("gate-train: rule-based gate (no training)")
        _write_manifest(workdir, "gate-train", [queries_path], stage_cfg, [out])
        return 0
    records, _ = load_benchmark(queries_path)
    encoder_spec = json.loads((workdir / "encoder.json").read_text())
    query_table = None
    if encoder_spec["kind"] == "precomputed":
        if not args.query_embeddings:
            raise SystemExit("gate-train: precomputed encoder requires --query-embeddings")
        query_table, _ = load_embeddings(args.query_embeddings)
    labeled = [r for r in records if r.split == args.split and r.gate_label in ("H", "E")]
    E = np.stack([_query_vector(encoder_spec, r.text, r.query_id, query_table) for r in labeled])
    y = np.array([1 if r.gate_label == "H" else 0 for r in labeled])
    gate = train_gate(E, y, variant=args.variant, seed=seed)
    _save_gate(gate, out)
    acc = float(np.mean((gate.alpha_batch(E) >= 0.5).astype(int) == y))
    print(f"gate-train: {args.variant} gate on {len(labeled)} queries, train accuracy {acc:.4f}")
    _snapshot_config(workdir, "gate-train", stage_cfg)
    _write_manifest(workdir, "gate-train", [queries_path], stage_cfg, [out])
    return 0


def cmd_build_index(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    emb_path = workdir / "embeddings.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    seed = stage_seed(master, "build-index")
    stage_cfg = {
        "kind": args.kind,
        "M": args.m,
        "ef_construction": args.ef_construction,
        "seed": seed,
        "graph": str(graph_path),
    }
    outputs = [workdir / "tangent.hyix", workdir / "text.hyix", workdir / "temperatures.json"]
    if not args.force and _manifest_matches(workdir, "build-index", [graph_path, emb_path], stage_cfg):
        print("build-index: up to date")
        return 0
    assert_fresh(workdir, "train")
    g = load_graph_jsonl(graph_path)
    table = load_checkpoint(emb_path)
    encoder_spec = json.loads((workdir / "encoder.json").read_text())
    tangent_index = build_index(
        (table.ids, table.tangents), metric="l2", kind=args.kind, M=args.m, ef_construction=args.ef_construction, seed=seed
    )
    save_index(tangent_index, workdir / "tangent.hyix")
    text_vectors = _entity_text_vectors(g, encoder_spec, workdir)
    text_table = dict(text_vectors)
    if encoder_spec["kind"] == "hash":
        enc = HashingEncoder(dim=encoder_spec["dim"], seed=encoder_spec["seed"])
        for nid, node in g.nodes.items():
            if node.synonyms:
                text_table[f"{nid}#syn"] = enc.encode(node.synonyms[0])
    text_index = build_index(
        text_table, metric="cosine", kind=args.kind, M=args.m, ef_construction=args.ef_construction, seed=seed
    )
    save_index(text_index, workdir / "text.hyix")
    # temperature calibration from validation-split parent-child edges
    queries_path = workdir / "queries.jsonl"
    tau_e, tau_h = 1.0, 1.0
    if queries_path.exists():
        records, _ = load_benchmark(queries_path)
        val_entities = {r.source_id for r in records if r.split == "val"}
        pairs = [(p, c) for c, p in g.isa_edges if c in val_entities]
        tau_e, tau_h = calibrate_temperatures(pairs, table)
    (workdir / "temperatures.json").write_text(json.dumps({"tau_E": tau_e, "tau_H": tau_h}, sort_keys=True))
    print(
        f"build-index: tangent {index_nbytes(tangent_index)} bytes, text {index_nbytes(text_index)} bytes, "
        f"tau_H {tau_h:.4f}"
    )
    _snapshot_config(workdir, "build-index", stage_cfg)
    _write_manifest(workdir, "build-index", [graph_path, emb_path], stage_cfg, outputs)
    return 0


def cmd_query(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    assert_fresh(workdir, "build-index")
    g = load_graph_jsonl(graph_path)
    retriever, encoder_spec, _ = _build_retriever(workdir, g)
    cfg = _retrieval_config(args, config, tau=_temperatures(workdir))
    texts = []
    if args.text:
        texts.append(("cli:0", args.text))
    if args.file:
        for i, line in enumerate(Path(args.file).read_text().splitlines()):
            if line.strip():
                texts.append((f"file:{i}", line.strip()))
    if not texts:
        raise SystemExit("query: provide --text or --file")
    lines = []
    for qid, text in texts:
        result = retriever.retrieve(text, cfg, query_id=qid)
        lines.append(result.to_json_line())
    payload = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(payload)
    else:
        sys.stdout.write(payload)
    return 0


def cmd_evaluate(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    queries_path = workdir / "queries.jsonl"
    stage_cfg = {"split": args.split, "mode": args.mode or "soft-mix", "k": args.k or 10}
    assert_fresh(workdir, "build-index")
    g = load_graph_jsonl(graph_path)
    records, _ = load_benchmark(queries_path)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    retriever, encoder_spec, _ = _build_retriever(workdir, g)
    query_table = None
    if encoder_spec["kind"] == "precomputed":
        if not args.query_embeddings:
            raise SystemExit("evaluate: precomputed encoder requires --query-embeddings")
        query_table, _ = load_embeddings(args.query_embeddings)
    tau = _temperatures(workdir)
    cfg = _retrieval_config(args, config, tau=tau)
    rankings = _rank_benchmark(retriever, records, cfg, encoder_spec, query_table)
    report = ev.evaluate_run(rankings, records)
    base_cfg = _retrieval_config(args, config, mode="euclidean-only", tau=tau)
    base_rankings = _rank_benchmark(retriever, records, base_cfg, encoder_spec, query_table)
    base_report = ev.evaluate_run(base_rankings, records)
    retention = ev.retention(report, base_report)
    rows = report.to_rows()
    _write_csv(workdir / "report.csv", rows, ["family", "bucket", "metric", "value"])
    # non-binding observation: direction of the mixed-intent depth trend
    qm_buckets = sorted(
        (bucket, stats["mrr"]) for (fam, bucket), stats in report.per_bucket.items() if fam == "QM"
    )
    qm_trend = None
    if len(qm_buckets) >= 2:
        slope = qm_buckets[-1][1] - qm_buckets[0][1]
        qm_trend = "up" if slope > 0 else ("down" if slope < 0 else "flat")
    summary = {
        "mode": cfg.mode,
        "split": args.split,
        "retention_qe_mrr": retention,
        "qm_depth_trend": qm_trend,
        "per_family": report.per_family,
        "skipped": report.skipped,
    }
    (workdir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    print(f"evaluate: {len(records)} queries, retention(QE mrr) {retention:.4f}")
    for family in sorted(report.per_family):
        stats = report.per_family[family]
        print(f"  {family}: hits@10 {stats.get('hits@10', 0):.3f} mrr {stats.get('mrr', 0):.3f}")
    _snapshot_config(workdir, "evaluate", stage_cfg)
    return 0


def cmd_stress_test(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    assert_fresh(workdir, "train")
    g = load_graph_jsonl(graph_path)
    table = load_checkpoint(workdir / "embeddings.jsonl")
    encoder_spec = json.loads((workdir / "encoder.json").read_text())
    adapter = _load_adapter(workdir / "adapter.json")
    rng = np.random.default_rng(stage_seed(master, "stress-test"))
    if args.queries_source == "benchmark":
        records, _ = load_benchmark(workdir / "queries.jsonl")
        records = [r for r in records if r.split == "test"]
        if len(records) > args.max_queries:
            sel = rng.choice(len(records), size=args.max_queries, replace=False)
            records = [records[i] for i in sorted(sel)]
        Q = np.stack(
            [adapt_tangent(_query_vector(encoder_spec, r.text, r.query_id), adapter) for r in records]
        )
    else:
        n = len(table)
        take = min(args.max_queries, n)
        sel = rng.choice(n, size=take, replace=False)
        Q = table.tangents[np.sort(sel)]
    L_values = [int(x) for x in args.l_values.split(",")] if args.l_values else [10, 20, 34, 50, 68, 100]
    L_values = sorted(set(L_values + [len(table)]))
    result = ev.stress_sweep(table, Q, L_values, k=args.k, radius=table.radius_budget)
    rows = [
        {"R": result.radius, "d": result.dim, "k": result.k, "L": L, "recall": rec, "L_th": result.L_th}
        for L, rec in result.rows
    ]
    _write_csv(workdir / "stress.csv", rows, ["R", "d", "k", "L", "recall", "L_th"])
    print(f"stress-test: {result.n_queries} queries, L_th={result.L_th}")
    for L, rec in result.rows:
        print(f"  L={L}: recall@{result.k} = {rec:.4f}")
    return 0


def cmd_theory(args) -> int:
    if args.kappa is not None:
        print(f"{kappa(args.kappa):.4f}")
        return 0
    if args.radius is not None:
        depth, branching, dim = args.radius
        print(f"{required_radius(int(depth), float(branching), int(dim)):.4f}")
        return 0
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    workdir.mkdir(parents=True, exist_ok=True)
    kappa_rows, radius_rows = ev.theory_curve_rows()
    _write_csv(workdir / "theory_kappa.csv", kappa_rows, ["R", "kappa"])
    _write_csv(workdir / "theory_radius.csv", radius_rows, ["depth", "branching", "dim", "required_radius"])
    print(f"theory: wrote {workdir/'theory_kappa.csv'} and {workdir/'theory_radius.csv'}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config_file(args.config)
    workdir = Path(_resolve(args.workdir, "workdir", config, "runs"))
    graph_path = Path(args.graph) if args.graph else workdir / "graph.jsonl"
    master = _resolve(args.seed, "seed", config, 0)
    assert_fresh(workdir, "build-index")
    g = load_graph_jsonl(graph_path)
    records, _ = load_benchmark(workdir / "queries.jsonl")
    test_records = [r for r in records if r.split == "test"]
    retriever, encoder_spec, emb = _build_retriever(workdir, g)
    tau = _temperatures(workdir)
    rows = []
    reports = {}

    def eval_mode(setting, mode, pool=True, retr=None):
        cfg = _retrieval_config(args, config, mode=mode, pool=pool, tau=tau)
        rankings = _rank_benchmark(retr or retriever, test_records, cfg, encoder_spec)
        report = ev.evaluate_run(rankings, test_records)
        reports[setting] = report
        for family, stats in report.per_family.items():
            for metric in ("hits@1", "hits@5", "hits@10", "mrr", "ndcg@10", "ancestor_f1_macro", "ancestor_f1_micro"):
                if metric in stats:
                    rows.append(
                        {"experiment": "modes", "setting": setting, "family": family, "metric": metric, "value": stats[metric]}
                    )
        return report

    print("ablate: mode matrix")
    eval_mode("euclidean-only", "euclidean-only")
    eval_mode("no-gate", "no-gate")
    eval_mode("hard-route", "hard-route")
    soft_report = eval_mode("soft-mix", "soft-mix")
    retention = ev.retention(soft_report, reports["euclidean-only"])
    rows.append({"experiment": "modes", "setting": "soft-mix", "family": "QE", "metric": "retention_mrr", "value": retention})

    # the no-radius-control ablation retrains without the budget
    print("ablate: no-radius-control retrain")
    train_cfg_rec = json.loads((workdir / "config.train.json").read_text())["train"]
    nor_cfg = TrainConfig(**{**train_cfg_rec, "lambda_radius": 0.0, "clip_after_step": False})
    text_vectors = _entity_text_vectors(g, encoder_spec, workdir)
    nor_table, nor_adapter, _ = train_embeddings(g, text_vectors, nor_cfg)
    nor_tangent = build_index((nor_table.ids, nor_table.tangents), metric="l2", kind="exact")
    nor_retr = Retriever(
        nor_table,
        nor_adapter,
        nor_tangent,
        text_index=retriever.text_index,
        text_vectors=text_vectors,
        gate=retriever.gate,
    )
    eval_mode("no-radius-control", "no-gate", retr=nor_retr)
    radius_stats = {
        "clipped_max_radius": float(emb.radii().max()),
        "no_radius_max_radius": float(nor_table.radii().max()),
        "radius_budget": emb.radius_budget,
    }
    rows.append(
        {
            "experiment": "radius",
            "setting": "no-radius-control",
            "family": "-",
            "metric": "max_radius",
            "value": radius_stats["no_radius_max_radius"],
        }
    )
    rows.append(
        {
            "experiment": "radius",
            "setting": "clipped",
            "family": "-",
            "metric": "max_radius",
            "value": radius_stats["clipped_max_radius"],
        }
    )

    # flat translational baseline: structure-only candidates and L2 scoring
    print("ablate: flat translational baseline")
    kg_cfg = TrainConfig(**{**train_cfg_rec, "lambda_radius": 0.0, "clip_after_step": False})
    kg_table, kg_trans, kg_adapter = train_kg_baseline(g, text_vectors, kg_cfg)
    kg_index = build_index((kg_table.ids, kg_table.tangents), metric="l2", kind="exact")
    kg_rankings = {}
    for rec in sorted(test_records, key=lambda r: r.query_id):
        e_q = _query_vector(encoder_spec, rec.text, rec.query_id)
        v_q = kg_adapter.W @ e_q + kg_adapter.b if kg_adapter is not None else np.zeros(kg_table.dim)
        hits = kg_index.search(v_q, args.k or 10)
        kg_rankings[rec.query_id] = [h for h, _ in hits]
    kg_report = ev.evaluate_run(kg_rankings, test_records)
    reports["kg-baseline"] = kg_report
    for family, stats in kg_report.per_family.items():
        for metric in ("hits@10", "mrr"):
            if metric in stats:
                rows.append(
                    {"experiment": "modes", "setting": "kg-baseline", "family": family, "metric": metric, "value": stats[metric]}
                )

    # candidate pooling ablation: tangent-only vs pooled under the same reranker
    print("ablate: candidate pooling")
    pooled = reports["soft-mix"]
    only_h = eval_mode("soft-mix-no-pool", "soft-mix", pool=False)
    for family in sorted(set(pooled.per_family) & set(only_h.per_family)):
        for metric in ("hits@10", "mrr"):
            a = only_h.per_family[family].get(metric)
            b = pooled.per_family[family].get(metric)
            if a is None or b is None:
                continue
            rows.append({"experiment": "pooling", "setting": "C_H-only", "family": family, "metric": metric, "value": a})
            rows.append({"experiment": "pooling", "setting": "C_H+C_E", "family": family, "metric": metric, "value": b})
            if a > 0:
                rows.append(
                    {
                        "experiment": "pooling",
                        "setting": "improvement_pct",
                        "family": family,
                        "metric": metric,
                        "value": 100.0 * (b - a) / a,
                    }
                )

    # adapter expressivity ablation: retrain with the two-layer adapter
    print("ablate: two-layer adapter retrain")
    mlp_cfg = TrainConfig(**{**train_cfg_rec, "adapter_variant": "two-layer"})
    mlp_table, mlp_adapter, _ = train_embeddings(g, text_vectors, mlp_cfg)
    mlp_tangent = build_index((mlp_table.ids, mlp_table.tangents), metric="l2", kind="exact")
    mlp_retr = Retriever(
        mlp_table,
        mlp_adapter,
        mlp_tangent,
        text_index=retriever.text_index,
        text_vectors=text_vectors,
        gate=retriever.gate,
    )
    eval_mode("adapter-two-layer", "soft-mix", retr=mlp_retr)

    # gate robustness: accuracy under query-embedding noise
    print("ablate: gate noise sweep")
    gate = retriever.gate
    noise_rows = []
    if gate is not None and not isinstance(gate, RuleGate):
        labeled = [r for r in test_records if r.gate_label in ("H", "E")]
        labels = np.array([1 if r.gate_label == "H" else 0 for r in labeled])
        for sigma in (0.0, 0.1, 0.2, 0.3):
            noise_seed = stage_seed(master, f"noise:{sigma}")
            scores = []
            for i, rec in enumerate(sorted(labeled, key=lambda r: r.query_id)):
                e_q = _query_vector(encoder_spec, rec.text, rec.query_id)
                e_q = perturb_embedding(e_q, sigma, seed=noise_seed + i)
                scores.append(gate.alpha(e_q))
            order = np.argsort([r.query_id for r in labeled], kind="stable")
            gm = ev.gate_metrics(np.asarray(scores), labels[order])
            noise_rows.append({"sigma": sigma, "accuracy": gm.accuracy, "precision": gm.precision, "recall": gm.recall})
            rows.append(
                {"experiment": "gate-noise", "setting": f"sigma={sigma}", "family": "QH/QE", "metric": "accuracy", "value": gm.accuracy}
            )

    _write_csv(workdir / "ablate.csv", rows, ["experiment", "setting", "family", "metric", "value"])
    summary = {
        "radius": radius_stats,
        "retention_qe_mrr": retention,
        "noise_sweep": noise_rows,
    }
    (workdir / "ablate.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")

    if args.efficiency:
        print("ablate: efficiency probe")
        eff_rows = []
        probe_queries = [r.text for r in sorted(test_records, key=lambda r: r.query_id)][:1000]
        for mode, pool in (("euclidean-only", True), ("no-gate", False), ("soft-mix", True)):
            cfg = _retrieval_config(args, config, mode=mode, pool=pool, tau=tau)
            med = ev.measure_latency_ms(lambda t: retriever.retrieve(t, cfg), probe_queries)
            size = index_nbytes(retriever.tangent_index) + (
                index_nbytes(retriever.text_index) if pool and retriever.text_index else 0
            )
            eff_rows.append({"mode": mode, "pooling": pool, "median_ms": med, "index_bytes": size})
        _write_csv(workdir / "efficiency.csv", eff_rows, ["mode", "pooling", "median_ms", "index_bytes"])

    print(f"ablate: wrote {workdir/'ablate.csv'}")
    return 0


def cmd_reproduce(args) -> int:
    """Chain every stage on the synthetic fixture and emit all artifacts."""
    ns = argparse.Namespace
    workdir = args.workdir or "runs"
    seed = args.seed if args.seed is not None else 0
    if args.scale == "smoke":
        depth, branch, target, epochs = 3, 2, 15, 30
    else:
        depth, branch, target, epochs = 6, 4, 5000, 300
    base = dict(workdir=workdir, config=args.config, seed=seed, force=args.force)
    rc = cmd_synth(ns(**base, depth=depth, branch=branch, output=str(Path(workdir) / "graph_full.jsonl")))
    rc |= cmd_subset(
        ns(**base, input=str(Path(workdir) / "graph_full.jsonl"), output=None, target=target)
    )
    rc |= cmd_gen_queries(ns(**base, graph=None, qe=2, qh=1, qm=1, buckets=4, bucket_bounds=None))
    rc |= cmd_train(
        ns(
            **base,
            graph=None,
            dim=args.dim,
            radius=args.radius,
            lambda_text=None,
            lambda_radius=None,
            margin=None,
            negatives=None,
            learning_rate=None,
            epochs=args.epochs if args.epochs is not None else epochs,
            adapter=None,
            embeddings=None,
            encoder_dim=None,
            no_radius_control=False,
            hard_negatives=False,
        )
    )
    rc |= cmd_gate_train(ns(**base, variant="linear", split="train", query_embeddings=None))
    rc |= cmd_build_index(ns(**base, graph=None, kind="graph", m=16, ef_construction=200))
    rc |= cmd_evaluate(
        ns(**base, graph=None, split="test", mode=None, k=None, l_h=None, l_e=None, no_pool=False, query_embeddings=None)
    )
    rc |= cmd_stress_test(
        ns(**base, graph=None, queries_source="benchmark", max_queries=500, l_values=None, k=10)
    )
    rc |= cmd_ablate(
        ns(**base, graph=None, k=None, l_h=None, l_e=None, no_pool=False, mode=None, efficiency=args.efficiency)
    )
    rc |= cmd_theory(ns(kappa=None, radius=None, config=args.config, workdir=workdir))
    print("reproduce: done" if rc == 0 else "reproduce: FAILED")
    return rc


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--workdir", default=None, help="artifact directory (env HYPRET_WORKDIR, default ./runs)")
    p.add_argument("--config", default=None, help="JSON config file; keys mirror long flag names")
    p.add_argument("--seed", type=int, default=None, help="master seed, fanned out per stage (env HYPRET_SEED)")
    p.add_argument("--force", action="store_true", help="rerun even if the stage manifest is up to date")
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker cap; kernels are single-threaded, 1 guarantees bit reproducibility",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypret", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hypret {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an OBO flat file into the internal graph format")
    _add_common(p)
    p.add_argument("--obo", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a perfect b-ary synthetic ontology")
    _add_common(p)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--branch", type=int, required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("subset", help="deterministic BFS subset of a graph")
    _add_common(p)
    p.add_argument("--input", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--target", type=int, required=True)
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("gen-queries", help="generate the stratified query benchmark")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--qe", type=int, default=2)
    p.add_argument("--qh", type=int, default=1)
    p.add_argument("--qm", type=int, default=1)
    p.add_argument("--buckets", type=int, default=4)
    p.add_argument("--bucket-bounds", default=None, help='explicit depth buckets, e.g. "0-4,5,6"')
    p.set_defaults(func=cmd_gen_queries)

    p = sub.add_parser("train", help="train radius-constrained hyperbolic embeddings")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--lambda-text", type=float, default=None, dest="lambda_text")
    p.add_argument("--lambda-radius", type=float, default=None, dest="lambda_radius")
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--adapter", choices=("linear", "two-layer"), default=None)
    p.add_argument("--embeddings", default=None, help="precomputed entity embeddings (emb-v1) instead of hashing")
    p.add_argument("--encoder-dim", type=int, default=None, dest="encoder_dim")
    p.add_argument("--no-radius-control", action="store_true", help="ablation: no penalty, no clipping")
    p.add_argument("--hard-negatives", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gate-train", help="train the query gate on labeled benchmark queries")
    _add_common(p)
    p.add_argument("--variant", choices=("linear", "two-layer", "rule"), default="linear")
    p.add_argument("--split", default="train")
    p.add_argument("--query-embeddings", default=None, dest="query_embeddings")
    p.set_defaults(func=cmd_gate_train)

    p = sub.add_parser("build-index", help="build the tangent and text indexes")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--kind", choices=("exact", "graph"), default="graph")
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--ef-construction", type=int, default=200, dest="ef_construction")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="run retrieval for ad-hoc queries")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--text", default=None)
    p.add_argument("--file", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--mode", choices=("euclidean-only", "hyperbolic-only", "no-gate", "hard-route", "soft-mix"), default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--l-h", type=int, default=None, dest="l_h")
    p.add_argument("--l-e", type=int, default=None, dest="l_e")
    p.add_argument("--no-pool", action="store_true", dest="no_pool")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="evaluate the pipeline on the benchmark")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--mode", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--l-h", type=int, default=None, dest="l_h")
    p.add_argument("--l-e", type=int, default=None, dest="l_e")
    p.add_argument("--no-pool", action="store_true", dest="no_pool")
    p.add_argument("--query-embeddings", default=None, dest="query_embeddings")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stress-test", help="indexability stress sweep over the oversampling factor")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--queries-source", choices=("benchmark", "entities"), default="benchmark", dest="queries_source")
    p.add_argument("--max-queries", type=int, default=500, dest="max_queries")
    p.add_argument("--l-values", default=None, dest="l_values", help="comma-separated oversampling sizes")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_stress_test)

    p = sub.add_parser("ablate", help="mode matrix, pooling/adapter ablations, gate noise sweep")
    _add_common(p)
    p.add_argument("--graph", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--l-h", type=int, default=None, dest="l_h")
    p.add_argument("--l-e", type=int, default=None, dest="l_e")
    p.add_argument("--no-pool", action="store_true", dest="no_pool")
    p.add_argument("--mode", default=None)
    p.add_argument("--efficiency", action="store_true", help="also measure latency medians (non-deterministic)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("theory", help="distortion and capacity calculators")
    p.add_argument("--kappa", type=float, default=None, help="print sinh(R)/R for this R")
    p.add_argument("--radius", nargs=3, metavar=("DEPTH", "BRANCHING", "DIM"), type=float, default=None)
    p.add_argument("--workdir", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("reproduce", help="chain all stages on the synthetic fixture")
    _add_common(p)
    p.add_argument("--scale", choices=("smoke", "desk"), default="smoke")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--efficiency", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StaleArtifactError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
