import numpy as np
import pytest

from hypret import geometry as G
from hypret import _kernels as K

ORIGIN4 = np.array([1.0, 0.0, 0.0, 0.0])


def basis_tangent(d, axis, scale=1.0):
    u = np.zeros(d)
    u[axis] = scale
    return u


class TestLorentzDistance:
    def test_identity_at_origin(self):
        assert G.lorentz_distance(ORIGIN4, ORIGIN4) == 0.0

    def test_radial_geodesic_preserves_norm(self):
        for r in (0.3, 1.0, 2.5, 7.0):
            p = G.lorentz_exp0(basis_tangent(3, 0, r))
            d = G.lorentz_distance(p, np.array([1.0, 0, 0, 0]))
            assert abs(d - r) <= 1e-9 * max(1.0, r)

    def test_orthogonal_unit_tangents(self):
        # arcosh(cosh^2(1)) evaluated at high precision
        a = G.lorentz_exp0(basis_tangent(3, 0))
        b = G.lorentz_exp0(basis_tangent(3, 1))
        assert abs(G.lorentz_distance(a, b) - 1.5133740065965040) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = G.lorentz_exp0(rng.normal(size=5))
            b = G.lorentz_exp0(rng.normal(size=5))
            assert G.lorentz_distance(a, b) == G.lorentz_distance(b, a)

    def test_non_finite_rejected(self):
        bad = ORIGIN4.copy()
        bad[1] = np.nan
        with pytest.raises(ValueError, match="invalid point"):
            G.lorentz_distance(bad, ORIGIN4)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            u, v, w = rng.normal(scale=1.5, size=(3, 6))
            a, b, c = (G.lorentz_exp0(x) for x in (u, v, w))
            dab = G.lorentz_distance(a, b)
            dbc = G.lorentz_distance(b, c)
            dac = G.lorentz_distance(a, c)
            assert dac <= dab + dbc + 1e-9

    def test_no_nan_on_near_coincident_pairs(self):
        # clamping the arcosh argument keeps 1e6 nearly-equal pairs finite
        rng = np.random.default_rng(2)
        U = rng.normal(scale=2.0, size=(10**6, 4))
        V = U + rng.normal(scale=1e-9, size=U.shape)
        D = K.tangent_distance_matrix_np(U[:1000], V[:1000])
        assert np.all(np.isfinite(D))
        d_pair = K.tangent_pair_distances(U, V)
        assert np.all(np.isfinite(d_pair))


class TestExpLog:
    def test_zero_tangent_maps_to_origin(self):
        np.testing.assert_array_equal(G.lorentz_exp0(np.zeros(3)), ORIGIN4)

    def test_unit_tangent_coordinates(self):
        y = G.lorentz_exp0(basis_tangent(3, 0))
        assert abs(y[0] - 1.5430806348152437) < 1e-15
        assert abs(y[1] - 1.1752011936438014) < 1e-15
        assert y[2] == y[3] == 0.0

    def test_log_of_origin_is_zero(self):
        np.testing.assert_array_equal(G.lorentz_log0(ORIGIN4), np.zeros(3))

    def test_log_norm_equals_distance(self):
        u = np.array([2.0, -2.0, 1.0]) * (3.0 / 3.0)
        u *= 3.0 / np.linalg.norm(u)
        y = G.lorentz_exp0(u)
        assert abs(np.linalg.norm(G.lorentz_log0(y)) - 3.0) < 1e-9

    def test_sub_clamp_y0_gives_zero_vector(self):
        y = np.array([1.0 + 1e-15, 3e-8, 0.0])
        out = G.lorentz_log0(y)
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_round_trips(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            r = rng.uniform(1e-4, 10.0)
            u = rng.normal(size=8)
            u *= r / np.linalg.norm(u)
            assert np.max(np.abs(G.lorentz_log0(G.lorentz_exp0(u)) - u)) < 1e-9
            y = G.project_to_hyperboloid(np.concatenate([[0.0], rng.normal(scale=2.0, size=8)]))
            y2 = G.lorentz_exp0(G.lorentz_log0(y))
            assert np.max(np.abs(y2 - y)) < 1e-9

    def test_exp_lands_on_hyperboloid(self):
        rng = np.random.default_rng(4)
        U = rng.normal(scale=3.0, size=(100, 7))
        Y = G.lorentz_exp0(U)
        assert G.is_on_hyperboloid(Y, tol=1e-9)


class TestPoincare:
    def test_zero_maps_to_center(self):
        np.testing.assert_array_equal(G.poincare_exp0(np.zeros(4)), np.zeros(4))

    def test_radius_relation(self):
        u = basis_tangent(4, 1, 2.0)
        x = G.poincare_exp0(u)
        assert abs(np.linalg.norm(x) - 0.7615941559557649) < 1e-15

    def test_mutual_inverses(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            u = rng.normal(scale=1.5, size=5)
            np.testing.assert_allclose(G.poincare_log0(G.poincare_exp0(u)), u, atol=1e-10)

    def test_outside_ball_rejected(self):
        with pytest.raises(ValueError, match="outside ball"):
            G.poincare_log0(np.array([1.0, 0.5]))
        with pytest.raises(ValueError, match="outside ball"):
            G.poincare_distance(np.array([0.99, 0.3]), np.array([0.1, 0.0]))

    def test_clamp_keeps_norm_strictly_inside(self):
        x = G.clamp_to_ball(np.array([3.0, 4.0]))
        assert np.linalg.norm(x) <= 1.0 - 1e-12
        inside = np.array([0.1, 0.2])
        np.testing.assert_array_equal(G.clamp_to_ball(inside), inside)

    def test_model_consistency(self):
        # the two parameterizations are isometric
        rng = np.random.default_rng(6)
        for _ in range(200):
            u, v = rng.normal(scale=1.2, size=(2, 6))
            d_lorentz = G.lorentz_distance(G.lorentz_exp0(u), G.lorentz_exp0(v))
            d_poincare = G.poincare_distance(G.poincare_exp0(u), G.poincare_exp0(v))
            assert abs(d_lorentz - d_poincare) < 1e-8

    def test_conversions_agree(self):
        rng = np.random.default_rng(7)
        u = rng.normal(size=5)
        y = G.lorentz_exp0(u)
        x = G.lorentz_to_poincare(y)
        np.testing.assert_allclose(x, G.poincare_exp0(u), atol=1e-12)
        np.testing.assert_allclose(G.poincare_to_lorentz(x), y, atol=1e-10)


class TestDistortionCalculators:
    def test_kappa_limit_and_values(self):
        assert abs(G.kappa(1e-9) - 1.0) < 1e-12
        assert abs(G.kappa(3.0) - 3.3392916424699677) < 1e-12
        assert abs(G.kappa(1.0) - 1.1752011936438014) < 1e-12

    def test_kappa_monotone(self):
        rs = np.linspace(0.01, 8.0, 200)
        ks = [G.kappa(r) for r in rs]
        assert np.all(np.diff(ks) > 0)

    def test_kappa_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            G.kappa(0.0)
        with pytest.raises(ValueError):
            G.kappa(-1.0)

    def test_oversampling_threshold(self):
        assert G.oversampling_threshold(3.0, 10) == 34
        assert G.oversampling_threshold(1e-8, 10) == 10
        assert G.oversampling_threshold(1.0, 5) == 6
        with pytest.raises(ValueError):
            G.oversampling_threshold(3.0, 0)

    def test_required_radius(self):
        assert abs(G.required_radius(30, 2, 32) - 0.67) < 0.01
        assert abs(G.required_radius(30, 10, 32) - 2.23) < 0.01
        assert abs(G.required_radius(20, 5, 32) - 1.04) < 0.01
        with pytest.raises(ValueError):
            G.required_radius(30, 2, 1)


class TestBiLipschitz:
    def test_bounds_hold_on_random_pairs(self):
        # smaller version of the acceptance sweep
        rng = np.random.default_rng(8)
        for radius in (0.5, 2.0, 5.0):
            kap = G.kappa(radius)
            U = rng.normal(size=(2000, 16))
            U *= (rng.uniform(0, radius, size=2000) / np.linalg.norm(U, axis=1))[:, None]
            V = rng.normal(size=(2000, 16))
            V *= (rng.uniform(0, radius, size=2000) / np.linalg.norm(V, axis=1))[:, None]
            d_h = K.tangent_pair_distances(U, V)
            d_e = np.linalg.norm(U - V, axis=1)
            assert np.all(d_e - 1e-9 <= d_h)
            assert np.all(d_h <= kap * d_e + 1e-9)


class TestKernelPathsAgree:
    def test_distance_matrix_variants(self):
        rng = np.random.default_rng(9)
        Q = rng.normal(size=(40, 12))
        X = rng.normal(size=(70, 12))
        got_np = K.tangent_distance_matrix_np(Q, X)
        got_dispatch = K.tangent_distance_matrix(Q, X)
        np.testing.assert_allclose(got_dispatch, got_np, atol=1e-12)
        ref = np.array(
            [[G.lorentz_distance(G.lorentz_exp0(q), G.lorentz_exp0(x)) for x in X[:5]] for q in Q[:5]]
        )
        np.testing.assert_allclose(got_np[:5, :5], ref, atol=1e-12)
