import numpy as np
import pytest

from hypret import index as ix


def random_table(n, d, seed=0, prefix="v"):
    rng = np.random.default_rng(seed)
    return {f"{prefix}{i:05d}": rng.normal(size=d) for i in range(n)}


def brute_force_order(table, q, metric="l2"):
    ids = sorted(table)
    mat = np.array([table[i] for i in ids], dtype=np.float64)
    if metric == "cosine":
        mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
        q = np.asarray(q, dtype=np.float64)
        q = q / np.linalg.norm(q)
    mat32 = mat.astype(np.float32).astype(np.float64)
    d = np.linalg.norm(mat32 - q, axis=1)
    order = np.lexsort((np.arange(len(ids)), d))
    return [ids[i] for i in order]


class TestExactIndex:
    def test_single_vector_always_returned(self):
        idx = ix.build_index({"only": np.ones(4)})
        for _ in range(3):
            assert idx.search(np.random.default_rng(0).normal(size=4), 1)[0][0] == "only"

    def test_exact_equals_full_sort(self):
        table = random_table(200, 8, seed=1)
        idx = ix.build_index(table)
        q = np.random.default_rng(2).normal(size=8)
        got = [i for i, _ in idx.search(q, 200)]
        assert got == brute_force_order(table, q)

    def test_stored_vector_found_at_distance_zero(self):
        table = random_table(50, 6, seed=3)
        idx = ix.build_index(table)
        rid, dist = idx.search(table["v00007"], 1)[0]
        assert rid == "v00007"
        assert dist < 1e-6

    def test_ties_break_by_ascending_id(self):
        table = {"b": np.array([1.0, 0.0]), "a": np.array([1.0, 0.0]), "c": np.array([0.0, 5.0])}
        idx = ix.build_index(table)
        got = [i for i, _ in idx.search(np.array([1.0, 0.0]), 3)]
        assert got == ["a", "b", "c"]

    def test_l_larger_than_store(self):
        idx = ix.build_index(random_table(5, 3))
        assert len(idx.search(np.zeros(3), 50)) == 5

    def test_invalid_l(self):
        idx = ix.build_index(random_table(5, 3))
        with pytest.raises(ValueError):
            idx.search(np.zeros(3), 0)

    def test_dim_mismatch(self):
        idx = ix.build_index(random_table(5, 3))
        with pytest.raises(ValueError, match="dim"):
            idx.search(np.zeros(4), 1)
        with pytest.raises(ValueError):
            ix.build_index({"a": np.ones(3), "b": np.ones(4)})

    def test_cosine_scale_invariance(self):
        table = random_table(100, 8, seed=4)
        idx = ix.build_index(table, metric="cosine")
        q = np.random.default_rng(5).normal(size=8)
        r1 = idx.search(q, 10)
        r2 = idx.search(2.0 * q, 10)
        assert r1 == r2


class TestGraphIndex:
    def test_recall_against_oracle(self):
        table = random_table(1500, 16, seed=6)
        exact = ix.build_index(table, kind="exact")
        graph = ix.build_index(table, kind="graph", seed=7)
        rng = np.random.default_rng(8)
        hits = 0
        for _ in range(40):
            q = rng.normal(size=16)
            truth = {i for i, _ in exact.search(q, 10)}
            got = {i for i, _ in graph.search(q, 10, ef_search=100)}
            hits += len(truth & got)
        assert hits / 400 >= 0.95

    def test_recall_monotone_in_ef(self):
        table = random_table(1200, 12, seed=9)
        exact = ix.build_index(table, kind="exact")
        graph = ix.build_index(table, kind="graph", seed=10)
        rng = np.random.default_rng(11)
        queries = rng.normal(size=(30, 12))
        recalls = []
        for ef in (16, 32, 64, 128):
            hits = 0
            for q in queries:
                truth = {i for i, _ in exact.search(q, 10)}
                got = {i for i, _ in graph.search(q, 10, ef_search=ef)}
                hits += len(truth & got)
            recalls.append(hits / (10 * len(queries)))
        violations = sum(1 for a, b in zip(recalls, recalls[1:]) if b < a)
        assert violations <= 1

    def test_identical_query_returns_self_first(self):
        table = random_table(300, 8, seed=12)
        graph = ix.build_index(table, kind="graph", seed=13)
        rid, dist = graph.search(table["v00123"], 1)[0]
        assert rid == "v00123"
        assert dist < 1e-6

    def test_deterministic_given_seed(self):
        table = random_table(400, 8, seed=14)
        g1 = ix.build_index(table, kind="graph", seed=15)
        g2 = ix.build_index(table, kind="graph", seed=15)
        q = np.random.default_rng(16).normal(size=8)
        assert g1.search(q, 10) == g2.search(q, 10)


class TestSerialization:
    @pytest.mark.parametrize("kind", ["exact", "graph"])
    @pytest.mark.parametrize("metric", ["l2", "cosine"])
    def test_round_trip_preserves_results(self, kind, metric, tmp_path):
        table = random_table(200, 8, seed=17)
        idx = ix.build_index(table, metric=metric, kind=kind, seed=18)
        path = tmp_path / "index.hyix"
        ix.save_index(idx, path)
        loaded = ix.load_index(path)
        rng = np.random.default_rng(19)
        for _ in range(10):
            q = rng.normal(size=8)
            assert idx.search(q, 15) == loaded.search(q, 15)

    def test_magic_bytes_and_size(self, tmp_path):
        idx = ix.build_index(random_table(10, 4), kind="exact")
        data = ix.serialize_index(idx)
        assert data[:4] == b"HYIX"
        path = tmp_path / "i.hyix"
        ix.save_index(idx, path)
        assert path.stat().st_size == len(data) == ix.index_nbytes(idx)

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            ix.deserialize_index(b"NOPE" + b"\x00" * 64)
