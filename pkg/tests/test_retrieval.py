import numpy as np
import pytest

from hypret import retrieval as rt
from hypret.encoding import AdapterParams
from hypret.index import build_index
from hypret.training import EmbeddingTable, GateParams


def radial_tangent(d, axis, r):
    u = np.zeros(d)
    u[axis] = r
    return u


def make_fixture():
    """Two entities with crafted scores: from the origin query, s_H is the
    negative radius and s_E the planted cosine."""
    d = 4
    ids = ["e1", "e2"]
    tangents = np.stack([radial_tangent(d, 0, 2.0), radial_tangent(d, 1, 1.0)])
    emb = EmbeddingTable(ids=ids, tangents=tangents, radius_budget=3.0)
    text = {
        "e1": np.array([0.9, np.sqrt(1 - 0.81), 0.0]),
        "e2": np.array([0.5, np.sqrt(1 - 0.25), 0.0]),
    }
    tangent_index = build_index((ids, tangents), metric="l2", kind="exact")
    text_index = build_index(text, metric="cosine", kind="exact")
    adapter = AdapterParams(variant="linear", W=np.zeros((d, 3)), b=np.zeros(d))
    return emb, text, tangent_index, text_index, adapter


class TestMixedScore:
    def test_half_alpha_arithmetic(self):
        # candidates with (s_E, s_H) = (0.9, -2.0) and (0.5, -1.0): mixed
        # scores -0.55 vs -0.25, so the second ranks first
        emb, text, ti, xi, adapter = make_fixture()
        gate = GateParams(variant="linear", w=np.zeros(3), b=0.0)  # alpha = 0.5
        retr = rt.Retriever(emb, adapter, ti, text_index=xi, text_vectors=text, gate=gate)
        cfg = rt.RetrievalConfig(k=2, L_H=2, L_E=2, mode="soft-mix")
        out = retr.retrieve_encoded(np.array([1.0, 0.0, 0.0]), cfg)
        assert out.alpha == 0.5
        assert [c.id for c in out.candidates] == ["e2", "e1"]
        by_id = {c.id: c for c in out.candidates}
        assert abs(by_id["e1"].s_E - 0.9) < 1e-12 and abs(by_id["e1"].s_H + 2.0) < 1e-9
        assert abs(by_id["e1"].score + 0.55) < 1e-9
        assert abs(by_id["e2"].score + 0.25) < 1e-9

    def test_score_is_affine_in_alpha(self):
        emb, text, ti, xi, adapter = make_fixture()
        cfg_kwargs = dict(k=2, L_H=2, L_E=2, mode="soft-mix")
        scores = []
        for alpha_logit in (-1e6, 0.0, 1e6):
            gate = GateParams(variant="linear", w=np.zeros(3), b=alpha_logit)
            retr = rt.Retriever(emb, adapter, ti, text_index=xi, text_vectors=text, gate=gate)
            out = retr.retrieve_encoded(np.array([1.0, 0.0, 0.0]), rt.RetrievalConfig(**cfg_kwargs))
            by_id = {c.id: (c.score, out.alpha) for c in out.candidates}
            scores.append(by_id["e1"])
        (s0, a0), (s5, a5), (s1, a1) = scores
        assert (a0, a5, a1) == (0.0, 0.5, 1.0)
        # affine: midpoint value equals the average of the extremes
        assert abs(s5 - 0.5 * (s0 + s1)) < 1e-12


class TestAlphaExtremes:
    def setup_method(self):
        self.emb, self.text, self.ti, self.xi, self.adapter = make_fixture()

    def ranking(self, mode, gate=None):
        retr = rt.Retriever(
            self.emb, self.adapter, self.ti, text_index=self.xi, text_vectors=self.text, gate=gate
        )
        cfg = rt.RetrievalConfig(k=2, L_H=2, L_E=2, mode=mode)
        return retr.retrieve_encoded(np.array([1.0, 0.0, 0.0]), cfg).ids()

    def test_euclidean_only_is_cosine_ranking(self):
        assert self.ranking("euclidean-only") == ["e1", "e2"]

    def test_no_gate_is_hyperbolic_ranking(self):
        assert self.ranking("no-gate") == ["e2", "e1"]
        assert self.ranking("hyperbolic-only") == ["e2", "e1"]

    def test_forced_alpha_zero_matches_euclidean_mode(self):
        gate = GateParams(variant="linear", w=np.zeros(3), b=-1e9)  # alpha == 0.0 exactly
        assert self.ranking("soft-mix", gate) == self.ranking("euclidean-only")

    def test_forced_alpha_one_matches_hyperbolic_mode(self):
        gate = GateParams(variant="linear", w=np.zeros(3), b=1e9)
        assert self.ranking("soft-mix", gate) == self.ranking("hyperbolic-only")

    def test_hard_route_thresholds_at_half(self):
        low = GateParams(variant="linear", w=np.zeros(3), b=-0.1)  # alpha 0.475
        high = GateParams(variant="linear", w=np.zeros(3), b=0.1)
        assert self.ranking("hard-route", low) == self.ranking("euclidean-only")
        assert self.ranking("hard-route", high) == self.ranking("hyperbolic-only")

    def test_soft_mix_without_gate_errors(self):
        with pytest.raises(ValueError, match="gate"):
            self.ranking("soft-mix", None)


class TestPooling:
    def test_disjoint_lists_union(self):
        pool = rt.pool_candidates([("a", 0.1), ("b", 0.2)], [("c", 0.3), ("d", 0.4)])
        assert len(pool) == 4
        assert pool["a"] == [True, False] and pool["c"] == [False, True]

    def test_identical_lists_flag_both(self):
        pool = rt.pool_candidates([("a", 0.1)], [("a", 0.3)])
        assert pool == {"a": [True, True]}

    def test_text_candidates_disabled(self):
        pool = rt.pool_candidates([("a", 0.1), ("b", 0.2)], [])
        assert list(pool) == ["a", "b"]

    def test_alias_ids_canonicalized(self):
        pool = rt.pool_candidates([("x", 0.0)], [("x#syn", 0.1), ("y#syn", 0.2)])
        assert pool == {"x": [True, True], "y": [False, True]}


class TestTemperatures:
    def table_with_pair_distances(self, dists):
        # origin parents, radial children: d(parent, child) = radius
        d = 3
        ids = []
        tangents = []
        pairs = []
        for i, r in enumerate(dists):
            p, c = f"p{i}", f"c{i}"
            ids += [p, c]
            tangents += [np.zeros(d), radial_tangent(d, 0, r)]
            pairs.append((p, c))
        return EmbeddingTable(ids=ids, tangents=np.stack(tangents)), pairs

    def test_constant_distances(self):
        emb, pairs = self.table_with_pair_distances([2.0, 2.0, 2.0])
        assert rt.calibrate_temperatures(pairs, emb) == (1.0, 2.0)

    def test_median_of_skewed_distances(self):
        emb, pairs = self.table_with_pair_distances([1.0, 2.0, 9.0])
        tau_e, tau_h = rt.calibrate_temperatures(pairs, emb)
        assert (tau_e, tau_h) == (1.0, 2.0)

    def test_median_scaled_score_is_one(self):
        emb, pairs = self.table_with_pair_distances([0.5, 1.5, 4.0])
        _, tau_h = rt.calibrate_temperatures(pairs, emb)
        from hypret._kernels import tangent_pair_distances

        P = np.stack([emb.tangent(p) for p, _ in pairs])
        C = np.stack([emb.tangent(c) for _, c in pairs])
        scaled = tangent_pair_distances(P, C) / tau_h
        assert abs(np.median(np.abs(scaled)) - 1.0) < 1e-12

    def test_empty_pairs_fall_back(self):
        emb, _ = self.table_with_pair_distances([1.0])
        assert rt.calibrate_temperatures([], emb) == (1.0, 1.0)


class TestDeterminismAndEdgeCases:
    def test_byte_identical_results(self):
        emb, text, ti, xi, adapter = make_fixture()
        gate = GateParams(variant="linear", w=np.ones(3), b=-0.5)
        retr = rt.Retriever(emb, adapter, ti, text_index=xi, text_vectors=text, gate=gate)
        cfg = rt.RetrievalConfig(k=2, L_H=2, L_E=2, mode="soft-mix")
        q = np.array([0.3, 0.4, 0.5])
        a = retr.retrieve_encoded(q, cfg, query_id="q1").to_json_line()
        b = retr.retrieve_encoded(q, cfg, query_id="q1").to_json_line()
        assert a == b

    def test_config_validation(self):
        with pytest.raises(ValueError, match="unknown mode"):
            rt.RetrievalConfig(mode="fancy")
        with pytest.raises(ValueError, match="exceeds"):
            rt.RetrievalConfig(k=10, L_H=4, L_E=4)
        with pytest.raises(ValueError, match="temperatures"):
            rt.RetrievalConfig(tau_H=0.0)

    def test_ties_break_by_ascending_id(self):
        d = 3
        ids = ["zz", "aa"]
        tangents = np.stack([radial_tangent(d, 0, 1.0), radial_tangent(d, 1, 1.0)])
        emb = EmbeddingTable(ids=ids, tangents=tangents)
        text = {"zz": np.array([1.0, 0.0]), "aa": np.array([1.0, 0.0])}
        ti = build_index((ids, tangents), kind="exact")
        xi = build_index(text, metric="cosine", kind="exact")
        adapter = AdapterParams(variant="linear", W=np.zeros((d, 2)), b=np.zeros(d))
        retr = rt.Retriever(emb, adapter, ti, text_index=xi, text_vectors=text)
        out = retr.retrieve_encoded(np.array([1.0, 0.0]), rt.RetrievalConfig(k=2, L_H=2, L_E=2, mode="euclidean-only"))
        assert out.ids() == ["aa", "zz"]
