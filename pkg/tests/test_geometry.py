import math

import numpy as np
import pytest

from nnqp import DriverConfig, gradient, objective, solve
from nnqp.diagnostics import full_oracle
from nnqp.geometry import (
    EdgeIndex,
    PointCloud,
    build_dksg,
    build_meb,
    build_pd,
    build_zhlg,
    dksg_design,
    generate_cloud,
    init_dksg,
    init_meb,
    init_pd,
    init_zhlg,
    meb_ball,
    zhlg_objective,
)


class TestEdgeIndex:
    def test_bijection(self):
        edges = EdgeIndex(7)
        seen = [edges.index(i, j) for i in range(7) for j in range(i + 1, 7)]
        assert seen == list(range(21))
        for e in range(21):
            i, j = edges.pair(e)
            assert edges.index(i, j) == e == edges.index(j, i)

    def test_incidence_columns_have_two_ones(self):
        inc = EdgeIndex(6).incidence_matrix().toarray()
        np.testing.assert_array_equal(inc.sum(axis=0), 2)
        np.testing.assert_array_equal(inc.sum(axis=1), 5)

    def test_too_small(self):
        with pytest.raises(ValueError):
            EdgeIndex(1)


class TestDksg:
    def test_two_points(self):
        prob = build_dksg(PointCloud([[0.0, 0.0], [1.0, 2.0]]))
        assert prob.dim == 1
        assert prob.gram.toarray()[0, 0] == pytest.approx(10.0)
        np.testing.assert_array_equal(prob.ineq_matrix.toarray(), [[1.0], [1.0]])
        res = solve(prob, [])
        assert res.primal[0] == pytest.approx(1.0, abs=1e-9)

    def test_collinear_three_points(self):
        prob = build_dksg(PointCloud([[0.0], [1.0], [2.0]]))
        # edges (0,1), (0,2), (1,2)
        expected = np.array([[2.0, 2.0, -1.0], [2.0, 8.0, 2.0], [-1.0, 2.0, 2.0]])
        np.testing.assert_allclose(prob.gram.toarray(), expected, atol=1e-15)
        ref = full_oracle(prob)
        res = solve(prob, [1])
        assert res.objective == pytest.approx(ref.objective, rel=1e-7, abs=1e-10)

    @pytest.mark.parametrize("n, d", [(2, 1), (4, 2), (6, 3), (8, 2)])
    def test_gram_equals_explicit_design(self, n, d):
        pts = np.random.default_rng(n).standard_normal((n, d))
        a = dksg_design(pts)
        np.testing.assert_allclose(build_dksg(PointCloud(pts)).gram.toarray(), a.T @ a, atol=1e-12)

    def test_disjoint_edges_are_zero(self):
        q = build_dksg(generate_cloud("unit-cube", 6, 2, seed=1)).gram.toarray()
        edges = EdgeIndex(6)
        assert q[edges.index(0, 1), edges.index(2, 3)] == 0.0

    def test_init_star_only(self):
        cloud = generate_cloud("unit-cube", 5, 2, seed=0)
        active = init_dksg(cloud, beta0=0)
        free = np.setdiff1d(np.arange(10), active)
        np.testing.assert_array_equal(free, EdgeIndex(5).incident(0))

    def test_star_is_feasible(self):
        cloud = generate_cloud("unit-cube", 9, 3, seed=0)
        prob = build_dksg(cloud)
        x = np.zeros(prob.dim)
        x[EdgeIndex(9).incident(0)] = 1.0
        assert (prob.ineq_matrix @ x >= 1.0).all()

    def test_init_bounds_and_determinism(self):
        cloud = generate_cloud("unit-cube", 20, 2, seed=0)
        a1, a2 = init_dksg(cloud, 15, seed=4), init_dksg(cloud, 15, seed=4)
        np.testing.assert_array_equal(a1, a2)
        assert 190 - a1.size <= 20 + 15 - 1

    def test_optimum_complementarity(self):
        cloud = generate_cloud("unit-cube", 12, 2, seed=3)
        prob = build_dksg(cloud)
        res = solve(prob, init_dksg(cloud, 10, seed=3))
        slack = prob.ineq_matrix @ res.primal - 1.0
        assert slack.min() >= -1e-8
        u = res.certificate.ineq_dual
        assert np.all(u[slack > 1e-6] <= 1e-8)


class TestZhlg:
    def test_linear_term(self):
        cloud = generate_cloud("unit-cube", 5, 3, seed=0)
        prob = build_zhlg(cloud)
        edges = EdgeIndex(5)
        for e in range(prob.dim):
            i, j = edges.pair(e)
            dist2 = np.sum((cloud.points[i] - cloud.points[j]) ** 2)
            assert gradient(prob, np.zeros(prob.dim))[e] == pytest.approx(dist2 / 3 - 32.0, abs=1e-14)

    @pytest.mark.parametrize("t", [0.0, 1.0, 3.0, 5.0, 6.0])
    def test_one_variable_closed_form(self, t):
        mu, rho = 16.0, 2.0
        prob = build_zhlg(PointCloud([[0.0], [t]]), mu, rho)
        np.testing.assert_allclose(prob.gram.toarray(), [[mu + rho / 2]])
        assert prob.linear[0] == pytest.approx(t * t - 2 * mu)
        res = solve(prob, [])
        assert res.primal[0] == pytest.approx(max(0.0, (2 * mu - t * t) / (2 * mu + rho)), abs=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_direct_formula(self, seed):
        cloud = generate_cloud("unit-cube", 7, 2, seed=seed)
        prob = build_zhlg(cloud)
        x = np.random.default_rng(seed).random(prob.dim)
        assert objective(prob, x) + prob.constant == pytest.approx(zhlg_objective(cloud, x), abs=1e-10)

    def test_init(self):
        assert init_zhlg(5, 10).size == 0
        a1, a2 = init_zhlg(30, 40, seed=1), init_zhlg(30, 40, seed=1)
        np.testing.assert_array_equal(a1, a2)
        assert 435 - a1.size == 40


class TestMeb:
    def test_two_points(self):
        prob = build_meb(PointCloud([[0.0], [1.0]]))
        np.testing.assert_array_equal(prob.gram, [[0.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(prob.linear, [0.0, -1.0])
        res = solve(prob, init_meb(PointCloud([[0.0], [1.0]])))
        assert res.objective == pytest.approx(-0.25, abs=1e-12)

    def test_equilateral_triangle(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        ref = full_oracle(build_meb(PointCloud(pts)))
        assert ref.objective == pytest.approx(-1.0 / 3.0, abs=1e-10)

    @pytest.mark.parametrize("kind", ["unit-cube", "near-sphere"])
    def test_coverage(self, kind):
        cloud = generate_cloud(kind, 300, 10, seed=5)
        res = solve(build_meb(cloud), init_meb(cloud))
        center, radius = meb_ball(cloud, res.primal, res.objective)
        dists = np.linalg.norm(cloud.points - center, axis=1)
        assert dists.max() <= radius + 1e-6
        assert dists.max() ** 2 == pytest.approx(-res.objective, rel=1e-6)

    def test_init_small_cloud_all_free(self):
        assert init_meb(generate_cloud("unit-cube", 4, 5, seed=0)).size == 0

    def test_init_collinear(self):
        active = init_meb(PointCloud([[0.0], [1.0], [2.0], [3.0]]))
        np.testing.assert_array_equal(active, [1, 2])

    def test_init_matches_sort(self):
        cloud = generate_cloud("unit-cube", 50, 4, seed=9)
        dist = [np.sum((p - cloud.points.mean(axis=0)) ** 2) for p in cloud.points]
        ranked = sorted(range(50), key=lambda i: (-dist[i], i))[:5]
        np.testing.assert_array_equal(np.setdiff1d(np.arange(50), init_meb(cloud)), sorted(ranked))


class TestPd:
    def test_singletons(self):
        prob = build_pd([[0.0, 0.0]], [[3.0, 4.0]])
        res = solve(prob, init_pd(1, 1))
        np.testing.assert_array_equal(res.primal, [1.0, 1.0])
        assert res.objective == 25.0

    def test_identical_clouds(self):
        pts = np.random.default_rng(0).random((6, 3))
        res = solve(build_pd(pts, pts), init_pd(6, 6))
        assert abs(res.objective) <= 1e-12

    def test_segments_grid_search(self):
        p = np.array([[0.0, 0.0], [2.0, 1.0]])
        q = np.array([[1.0, 3.0], [3.0, 1.5]])
        res = solve(build_pd(p, q), init_pd(2, 2))
        s = np.linspace(0.0, 1.0, 1001)
        a = p[0] + s[:, None] * (p[1] - p[0])
        b = q[0] + s[:, None] * (q[1] - q[0])
        grid = np.min(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2))
        assert res.objective == pytest.approx(full_oracle(build_pd(p, q)).objective, abs=1e-9)
        assert res.objective == pytest.approx(grid, abs=1e-5)

    def test_init(self):
        np.testing.assert_array_equal(init_pd(1, 1), [])
        assert 20 - init_pd(10, 10).size == 6
        np.testing.assert_array_equal(np.setdiff1d(np.arange(20), init_pd(10, 10)), [0, 1, 2, 10, 11, 12])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            build_pd([[0.0, 0.0]], [[1.0, 2.0, 3.0]])


class TestGenerateCloud:
    def test_near_sphere_norms(self):
        norms = np.linalg.norm(generate_cloud("near-sphere", 500, 7, seed=0).points, axis=1)
        assert norms.min() >= 1 - 1e-4 and norms.max() <= 1 + 1e-4

    def test_unit_cube_range(self):
        pts = generate_cloud("unit-cube", 500, 7, seed=0).points
        assert pts.min() >= 0.0 and pts.max() <= 1.0

    @pytest.mark.parametrize("shift", [0.0, 4.0, 8.0])
    def test_shifted_cubes(self, shift):
        cloud = generate_cloud("shifted-cubes", 200, 5, seed=0, shift=shift)
        assert np.abs(cloud.points).max() <= 1.0
        q = cloud.second.copy()
        q[:, 0] -= 2.0 + shift
        assert np.abs(q).max() <= 1.0

    def test_seeded(self):
        a = generate_cloud("near-sphere", 20, 3, seed=11).points
        b = generate_cloud("near-sphere", 20, 3, seed=11).points
        np.testing.assert_array_equal(a, b)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_cloud("torus", 5, 2)
