"""Acceptance suite: one test per criterion at its stated tolerance, each
printing a pass/fail line. Run with `pytest tests/test_acceptance.py -s`.

The heavy criteria share the session-scoped 5k desk pipeline from conftest.
"""
import time

import numpy as np
import pytest

from hypret import _kernels as kernels
from hypret import evaluation as ev
from hypret import training as tr
from hypret.benchmark import perturb_embedding
from hypret.encoding import HashingEncoder, adapt_tangent, entity_text, init_adapter
from hypret.geometry import kappa, required_radius
from hypret.index import build_index, default_ef_search
from hypret.ontology import synth_bary
from hypret.retrieval import RetrievalConfig, Retriever
from hypret.training import GateParams, TrainConfig, train_embeddings, train_gate


def report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] {num:2d} {name}: {status}  {detail}")


# ---------------------------------------------------------------------------
# 1. bi-Lipschitz bound
# ---------------------------------------------------------------------------


def test_criterion_01_bilipschitz_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_low = np.inf
    worst_high = -np.inf
    for radius in (0.5, 1.0, 2.0, 3.0, 5.0):
        kap = kappa(radius)
        n = 10_000
        U = rng.normal(size=(n, 32))
        U *= (rng.uniform(0.0, radius, size=n) / np.linalg.norm(U, axis=1))[:, None]
        V = rng.normal(size=(n, 32))
        V *= (rng.uniform(0.0, radius, size=n) / np.linalg.norm(V, axis=1))[:, None]
        d_h = kernels.tangent_pair_distances(U, V)
        d_e = np.linalg.norm(U - V, axis=1)
        worst_low = min(worst_low, float(np.min(d_h - d_e)))
        worst_high = max(worst_high, float(np.max(d_h - kap * d_e)))
    elapsed = time.perf_counter() - t0
    ok = worst_low >= -1e-9 and worst_high <= 1e-9 and elapsed < 5.0
    report(1, "bi-Lipschitz bound", ok, f"low slack {worst_low:.2e}, high slack {worst_high:.2e}, {elapsed:.2f}s")
    assert worst_low >= -1e-9
    assert worst_high <= 1e-9
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 2. indexability stress test on the trained 5k subset
# ---------------------------------------------------------------------------


def test_criterion_02_indexability_stress(desk):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    test_records = [r for r in desk.records if r.split == "test"]
    sel = rng.choice(len(test_records), size=500, replace=False)
    queries = [test_records[i] for i in sorted(sel)]
    Q = np.stack([adapt_tangent(desk.encoder.encode(r.text), desk.adapter) for r in queries])
    n = len(desk.table)
    result = ev.stress_sweep(desk.table, Q, [20, 34, 50, 68, n], k=10, radius=3.0)
    elapsed = time.perf_counter() - t0
    r20 = result.recall_at(20)
    r50 = result.recall_at(50)
    r_full = result.recall_at(n)
    knee_ok = result.recall_at(result.L_th) >= 0.95 * result.recall_at(68)
    ok = r20 >= 0.90 and r50 >= 0.98 and r_full == 1.0 and knee_ok and elapsed < 600
    report(
        2,
        "indexability stress test",
        ok,
        f"recall@10: L=20 {r20:.4f}, L=50 {r50:.4f}, L=n {r_full:.4f}, L_th={result.L_th}, {elapsed:.1f}s",
    )
    assert r20 >= 0.90
    assert r50 >= 0.98
    assert r_full == 1.0
    assert knee_ok
    assert elapsed < 600


# ---------------------------------------------------------------------------
# 3. theory calculators reproduce the scale sanity check
# ---------------------------------------------------------------------------


def test_criterion_03_theory_sanity_check():
    r_low = required_radius(30, 2, 32)
    r_high = required_radius(30, 10, 32)
    k_low = kappa(r_low)
    k_high = kappa(r_high)
    checks = {
        "R(b=2)": (r_low, 0.67),
        "R(b=10)": (r_high, 2.23),
        "kappa(low)": (k_low, 1.08),
        "kappa(high)": (k_high, 2.06),
    }
    ok = all(abs(got - want) < 0.01 for got, want in checks.values())
    detail = ", ".join(f"{k} {got:.4f}~{want}" for k, (got, want) in checks.items())
    report(3, "theory sanity check", ok, detail)
    for got, want in checks.values():
        assert abs(got - want) < 0.01


# ---------------------------------------------------------------------------
# 4. routing-risk identity
# ---------------------------------------------------------------------------


def test_criterion_04_routing_risk_identity():
    rng = np.random.default_rng(404)
    loss_e = rng.uniform(0.0, 1.0, size=1000)
    loss_h = rng.uniform(0.0, 1.0, size=1000)
    latent_h = loss_h <= loss_e
    predicted_h = rng.uniform(size=1000) > 0.37  # arbitrary router
    res = ev.routing_risk_check(loss_e, loss_h, latent_h, predicted_h)
    ok = res.residual < 1e-12
    report(4, "routing-risk identity", ok, f"residual {res.residual:.2e}")
    assert res.residual < 1e-12


# ---------------------------------------------------------------------------
# 5. alpha-extreme equivalence over 500 queries
# ---------------------------------------------------------------------------


def test_criterion_05_alpha_extreme_equivalence(desk):
    rng = np.random.default_rng(505)
    sel = rng.choice(len(desk.records), size=500, replace=False)
    queries = [desk.records[i] for i in sorted(sel)]
    gate_zero = GateParams(variant="linear", w=np.zeros(desk.encoder.dim), b=-1e9)
    gate_one = GateParams(variant="linear", w=np.zeros(desk.encoder.dim), b=1e9)
    base = desk.retriever
    mismatches = 0
    for rec in queries:
        e_q = desk.encoder.encode(rec.text)
        for forced_gate, mode in ((gate_zero, "euclidean-only"), (gate_one, "hyperbolic-only")):
            forced = Retriever(
                desk.table,
                desk.adapter,
                desk.tangent_index,
                text_index=desk.text_index,
                text_vectors=desk.text_vectors,
                gate=forced_gate,
            )
            cfg_soft = RetrievalConfig(k=10, mode="soft-mix", tau_E=desk.tau[0], tau_H=desk.tau[1])
            cfg_mode = RetrievalConfig(k=10, mode=mode, tau_E=desk.tau[0], tau_H=desk.tau[1])
            a = forced.retrieve_encoded(e_q, cfg_soft, rec.query_id).ids()
            b = base.retrieve_encoded(e_q, cfg_mode, rec.query_id).ids()
            if a != b:
                mismatches += 1
    ok = mismatches == 0
    report(5, "alpha-extreme equivalence", ok, f"{mismatches} mismatching rank lists of {2 * len(queries)}")
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 6. gradient checks, 100 random configurations per loss term
# ---------------------------------------------------------------------------


def _central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


def test_criterion_06_gradient_checks():
    from test_training import sample_away_from_hinges

    rng = np.random.default_rng(606)
    worst = {}

    errs = []
    for _ in range(100):
        u_p, u_c, U_n = sample_away_from_hinges(rng, 6, 3, 0.1)
        _, g_p, g_c, G_n = tr.hier_loss_and_grads(u_p, u_c, U_n, 0.1)
        analytic = np.concatenate([g_p, g_c, G_n.ravel()])

        def f(flat):
            a = flat[:6]
            b = flat[6:12]
            N = flat[12:].reshape(U_n.shape)
            return tr.hier_loss_and_grads(a, b, N, 0.1)[0]

        numeric = _central_diff(f, np.concatenate([u_p, u_c, U_n.ravel()]))
        errs.append(_rel(analytic, numeric))
    worst["hier"] = max(errs)

    errs = []
    for _ in range(100):
        adapter = init_adapter(5, 8, "linear", seed=int(rng.integers(2**31)), scale=0.4)
        e = rng.normal(size=8)
        u = rng.normal(scale=0.6, size=5)
        loss, g_u, grads = tr.text_loss_and_grads(u, e, adapter)
        if loss < 1e-3:
            continue
        num_u = _central_diff(lambda x: tr.text_loss_and_grads(x, e, adapter)[0], u)
        errs.append(_rel(g_u, num_u))

        def f_w(flat):
            stash = adapter.W.copy()
            adapter.W[...] = flat.reshape(adapter.W.shape)
            val = tr.text_loss_and_grads(u, e, adapter)[0]
            adapter.W[...] = stash
            return val

        errs.append(_rel(grads["W"].ravel(), _central_diff(f_w, adapter.W.ravel())))
    worst["text"] = max(errs)

    errs = []
    for _ in range(100):
        U = rng.normal(scale=1.2, size=(5, 4))
        if np.any(np.abs(np.linalg.norm(U, axis=1) - 1.0) < 1e-3):
            continue
        _, G = tr.radius_penalty_and_grads(U, 1.0)
        num = _central_diff(lambda x: tr.radius_penalty_and_grads(x.reshape(U.shape), 1.0)[0], U.ravel())
        errs.append(_rel(G.ravel(), num))
    worst["radius"] = max(errs)

    errs = []
    for _ in range(100):
        E = rng.normal(size=(15, 6))
        y = (rng.uniform(size=15) > 0.5).astype(float)
        if y.min() == y.max():
            continue
        w = rng.normal(size=6)
        b = float(rng.normal())
        _, gw, gb = tr.gate_loss_and_grads(w, b, E, y)
        num = _central_diff(lambda x: tr.gate_loss_and_grads(x[:-1], float(x[-1]), E, y)[0], np.append(w, b))
        errs.append(_rel(np.append(gw, gb), num))
    worst["gate"] = max(errs)

    errs = []
    for _ in range(100):
        adapter = init_adapter(4, 6, "two-layer", seed=int(rng.integers(2**31)), scale=0.5)
        e = rng.normal(size=6)
        u = rng.normal(scale=0.6, size=4)
        loss, g_u, grads = tr.text_loss_and_grads(u, e, adapter)
        if loss < 1e-3:
            continue
        flat_names = ["W", "b", "W1", "b1"]
        analytic = np.concatenate([grads[n].ravel() for n in flat_names])

        def f_params(flat):
            stash = [getattr(adapter, n).copy() for n in flat_names]
            pos = 0
            for n in flat_names:
                arr = getattr(adapter, n)
                arr[...] = flat[pos : pos + arr.size].reshape(arr.shape)
                pos += arr.size
            val = tr.text_loss_and_grads(u, e, adapter)[0]
            for n, s in zip(flat_names, stash):
                getattr(adapter, n)[...] = s
            return val

        numeric = _central_diff(f_params, np.concatenate([getattr(adapter, n).ravel() for n in flat_names]))
        errs.append(_rel(analytic, numeric))
    worst["adapter"] = max(errs)

    ok = all(v < 1e-4 for v in worst.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    report(6, "gradient checks", ok, detail)
    for name, v in worst.items():
        assert v < 1e-4, name


# ---------------------------------------------------------------------------
# 7. radius budget is exact under clipping and non-vacuous
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def deep_fixture():
    """Deep narrow hierarchy with a tight budget: the radial-ordering margin
    wants leaves at radius ~1.0, so an R=0.5 budget actually binds."""
    g = synth_bary(10, 2, seed=1)
    encoder = HashingEncoder(dim=128, seed=0)
    text = {nid: encoder.encode(entity_text(node)) for nid, node in g.nodes.items()}
    return g, text


def test_criterion_07_radius_budget(deep_fixture):
    g, text = deep_fixture
    budget = 0.5
    clipped_cfg = TrainConfig(dim=32, radius_budget=budget, epochs=200, seed=0)
    clipped, _, diag = train_embeddings(g, text, clipped_cfg)
    free_cfg = TrainConfig(
        dim=32, radius_budget=budget, epochs=200, seed=0, lambda_radius=0.0, clip_after_step=False
    )
    free, _, _ = train_embeddings(g, text, free_cfg)
    max_clipped = float(clipped.radii().max())
    max_free = float(free.radii().max())
    ok = max_clipped <= budget + 1e-6 and max_free > budget and all(v == 0.0 for v in diag.budget_violation_fraction)
    report(7, "radius budget", ok, f"clipped max {max_clipped:.6f} <= {budget}+1e-6, unconstrained max {max_free:.4f}")
    assert max_clipped <= budget + 1e-6
    assert max_free > budget
    assert all(v == 0.0 for v in diag.budget_violation_fraction)


# ---------------------------------------------------------------------------
# 8. pooling ablation direction and retention
# ---------------------------------------------------------------------------


def _rank_records(desk, records, cfg):
    rankings = {}
    for rec in sorted(records, key=lambda r: r.query_id):
        e_q = desk.encoder.encode(rec.text)
        rankings[rec.query_id] = desk.retriever.retrieve_encoded(e_q, cfg, rec.query_id, rec.text).ids()
    return rankings


def test_criterion_08_pooling_and_retention(desk):
    test_records = [r for r in desk.records if r.split == "test"]
    tau_e, tau_h = desk.tau
    cfg_pooled = RetrievalConfig(k=10, mode="soft-mix", pool_text_candidates=True, tau_E=tau_e, tau_H=tau_h)
    cfg_ch_only = RetrievalConfig(k=10, mode="soft-mix", pool_text_candidates=False, tau_E=tau_e, tau_H=tau_h)
    cfg_eucl = RetrievalConfig(k=10, mode="euclidean-only", pool_text_candidates=True, tau_E=tau_e, tau_H=tau_h)
    pooled = ev.evaluate_run(_rank_records(desk, test_records, cfg_pooled), test_records)
    ch_only = ev.evaluate_run(_rank_records(desk, test_records, cfg_ch_only), test_records)
    eucl = ev.evaluate_run(_rank_records(desk, test_records, cfg_eucl), test_records)

    qe_pooled = pooled.per_family["QE"]["hits@10"]
    qe_ch = ch_only.per_family["QE"]["hits@10"]
    retention = ev.retention(pooled, eucl)
    superset_ok = all(
        pooled.per_family[fam]["hits@10"] >= ch_only.per_family[fam]["hits@10"] - 1e-12
        for fam in pooled.per_family
    )
    ok = qe_pooled > qe_ch and retention >= 0.90 and superset_ok
    report(
        8,
        "pooling ablation and retention",
        ok,
        f"QE hits@10 pooled {qe_pooled:.3f} > C_H-only {qe_ch:.3f}, retention {retention:.4f}",
    )
    assert qe_pooled > qe_ch
    assert retention >= 0.90
    assert superset_ok


# ---------------------------------------------------------------------------
# 9. gate quality and noise robustness
# ---------------------------------------------------------------------------


def test_criterion_09_gate_quality(desk):
    test_labeled = [r for r in desk.records if r.split == "test" and r.gate_label in ("H", "E")]
    labels = np.array([1 if r.gate_label == "H" else 0 for r in test_labeled])
    E = np.stack([desk.encoder.encode(r.text) for r in test_labeled])
    linear_acc = float(np.mean((desk.gate.alpha_batch(E) >= 0.5).astype(int) == labels))
    rule_acc = float(np.mean(np.array([tr.rule_gate(r.text) for r in test_labeled]) == labels))
    accs = []
    for sigma in (0.0, 0.1, 0.2, 0.3):
        rng = np.random.default_rng(909)
        scores = []
        for i, rec in enumerate(test_labeled):
            e_q = perturb_embedding(E[i], sigma, seed=int(rng.integers(2**31)))
            scores.append(desk.gate.alpha(e_q))
        gm = ev.gate_metrics(np.asarray(scores), labels)
        accs.append(gm.accuracy)
    monotone = all(b <= a + 1e-12 for a, b in zip(accs, accs[1:]))
    ok = linear_acc >= 0.99 and rule_acc >= 0.99 and monotone
    report(
        9,
        "gate quality",
        ok,
        f"linear {linear_acc:.4f}, rule {rule_acc:.4f}, noise accs {[round(a, 3) for a in accs]}",
    )
    assert linear_acc >= 0.99
    assert rule_acc >= 0.99
    assert monotone


# ---------------------------------------------------------------------------
# 10. metric implementations match an independent reimplementation
# ---------------------------------------------------------------------------


def _oracle_hits(ranked, truth, k):
    found = False
    for item in ranked[:k]:
        if item in truth:
            found = True
    return 1.0 if found else 0.0


def _oracle_rr(ranked, truth):
    rank = 0
    for i in range(len(ranked)):
        if ranked[i] in truth and rank == 0:
            rank = i + 1
    return 0.0 if rank == 0 else 1.0 / rank


def _oracle_ndcg(ranked, truth, k):
    import math

    dcg = 0.0
    for i in range(min(k, len(ranked))):
        if ranked[i] in truth:
            dcg += 1.0 / math.log2(i + 2)
    ideal = 0.0
    for i in range(min(k, len(truth))):
        ideal += 1.0 / math.log2(i + 2)
    return dcg / ideal if ideal else 0.0


def _oracle_f1(ranked_topk, truth):
    inter = len([x for x in ranked_topk if x in truth])
    p = inter / len(ranked_topk) if ranked_topk else 0.0
    r = inter / len(truth) if truth else 0.0
    f1 = 0.0 if (p + r) == 0 else 2 * p * r / (p + r)
    return p, r, f1


def _oracle_recall(topk, pool, k):
    return len([t for t in topk if t in pool]) / k


def test_criterion_10_metric_oracle_equivalence():
    rng = np.random.default_rng(1010)
    mismatches = 0
    for _ in range(200):
        n_cand = int(rng.integers(1, 21))
        universe = [f"e{i}" for i in range(30)]
        ranked = list(rng.choice(universe, size=n_cand, replace=False))
        truth = set(rng.choice(universe, size=int(rng.integers(1, 10)), replace=False))
        k = int(rng.integers(1, 15))
        if ev.hits_at_k(ranked, truth, k) != _oracle_hits(ranked, truth, k):
            mismatches += 1
        if ev.reciprocal_rank(ranked, truth) != _oracle_rr(ranked, truth):
            mismatches += 1
        if ev.ndcg_at_k(ranked, truth, k) != _oracle_ndcg(ranked, truth, k):
            mismatches += 1
        if ev.ancestor_f1(ranked[:k], truth) != _oracle_f1(ranked[:k], truth):
            mismatches += 1
        pool = set(rng.choice(universe, size=int(rng.integers(1, 20)), replace=False))
        topk = list(rng.choice(universe, size=k, replace=False))
        if ev.indexability_recall(topk, pool, k) != _oracle_recall(topk, pool, k):
            mismatches += 1
    ok = mismatches == 0
    report(10, "metric oracle equivalence", ok, f"{mismatches} mismatches over 200 cases x 5 metrics")
    assert mismatches == 0


# ---------------------------------------------------------------------------
# 11. graph-index quality against the exact oracle
# ---------------------------------------------------------------------------


def test_criterion_11_ann_quality():
    rng = np.random.default_rng(1111)
    table = {f"v{i:05d}": rng.normal(size=32) for i in range(5000)}
    exact = build_index(table, kind="exact")
    graph = build_index(table, kind="graph", seed=3)
    queries = rng.normal(size=(100, 32))
    truth = [set(i for i, _ in exact.search(q, 10)) for q in queries]

    def recall(ef):
        hits = 0
        for q, t in zip(queries, truth):
            got = {i for i, _ in graph.search(q, 10, ef_search=ef)}
            hits += len(t & got)
        return hits / (10 * len(queries))

    default_recall = recall(default_ef_search(10))
    sweep = [recall(ef) for ef in (16, 32, 64, 128)]
    violations = sum(1 for a, b in zip(sweep, sweep[1:]) if b < a)
    ok = default_recall >= 0.95 and violations <= 1
    report(
        11,
        "ANN quality",
        ok,
        f"recall@10 {default_recall:.4f} at ef={default_ef_search(10)}, sweep {[round(r, 3) for r in sweep]}",
    )
    assert default_recall >= 0.95
    assert violations <= 1
