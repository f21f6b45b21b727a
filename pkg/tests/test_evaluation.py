"""W2, k-NN KL, metrics report and convergence benchmark."""

import itertools
import math

import numpy as np
import pytest

from geointerp.distributions import (
    MixtureSpec,
    SampleSet,
    sample_uniform,
    sample_vmf_mixture,
    vmf_mean_resultant,
)
from geointerp.errors import ConfigError, DegeneracyError, SizeError
from geointerp.evaluation import (
    MetricsReport,
    chordal_to_geodesic,
    convergence_bench,
    fit_order,
    geodesic_cost_matrix,
    kl_knn,
    w2_empirical,
)
from geointerp.manifold import SO3, SPHERE, so3_dist, so3_exp, sphere_dist


def sphere_set(seed, n):
    return sample_uniform(SPHERE, n, seed)


def vmf_vs_uniform_kl(kappa):
    """Closed form KL(vMF_kappa || uniform) on S^2."""
    log_c = math.log(kappa / (4 * math.pi)) - (kappa + math.log1p(-math.exp(-2 * kappa)) - math.log(2))
    return log_c + kappa * vmf_mean_resultant(kappa) + math.log(4 * math.pi)


class TestGeodesicCost:
    def test_sphere_matches_kernel(self):
        a, b = sphere_set(1, 30), sphere_set(2, 20)
        cost = geodesic_cost_matrix(a, b)
        brute = sphere_dist(a.points[:, None], b.points[None]) ** 2
        np.testing.assert_allclose(cost, brute, atol=1e-12)

    def test_so3_matches_kernel(self):
        a, b = sample_uniform(SO3, 25, 3), sample_uniform(SO3, 15, 4)
        cost = geodesic_cost_matrix(a, b)
        brute = so3_dist(a.points[:, None], b.points[None]) ** 2
        np.testing.assert_allclose(cost, brute, atol=1e-10)

    def test_chordal_monotone(self):
        c = np.linspace(0, 2, 50)
        assert np.all(np.diff(chordal_to_geodesic(SPHERE, c)) > 0)
        np.testing.assert_allclose(chordal_to_geodesic(SPHERE, 2.0), math.pi)


class TestW2:
    def test_identical(self):
        a = sphere_set(5, 300)
        assert w2_empirical(a, a) <= 1e-12

    def test_point_masses(self):
        a = SampleSet(SPHERE, [[1.0, 0.0, 0.0]])
        b = SampleSet(SPHERE, [[math.cos(0.7), math.sin(0.7), 0.0]])
        np.testing.assert_allclose(w2_empirical(a, b), 0.7, rtol=1e-14)

    @pytest.mark.parametrize("manifold", [SPHERE, SO3])
    def test_brute_force_permutations(self, manifold):
        a, b = sample_uniform(manifold, 8, 6), sample_uniform(manifold, 8, 7)
        cost = geodesic_cost_matrix(a, b)
        best = min(cost[np.arange(8), list(p)].mean() for p in itertools.permutations(range(8)))
        assert w2_empirical(a, b) == pytest.approx(math.sqrt(best), abs=1e-14)

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            a, b, c = (sphere_set(int(s), 60) for s in rng.integers(0, 10**6, 3))
            ab, bc, ac = w2_empirical(a, b), w2_empirical(b, c), w2_empirical(a, c)
            assert abs(ab - w2_empirical(b, a)) <= 1e-9
            assert ac <= ab + bc + 1e-9

    def test_isometry_invariance(self):
        g = so3_exp(np.array([0.4, -1.2, 2.0]))
        a, b = sphere_set(9, 200), sphere_set(10, 200)
        ga, gb = SampleSet(SPHERE, a.points @ g.T), SampleSet(SPHERE, b.points @ g.T)
        assert abs(w2_empirical(a, b) - w2_empirical(ga, gb)) <= 1e-9
        r, s = sample_uniform(SO3, 100, 11), sample_uniform(SO3, 100, 12)
        gr, gs = SampleSet(SO3, g @ r.points), SampleSet(SO3, g @ s.points)
        assert abs(w2_empirical(r, s) - w2_empirical(gr, gs)) <= 1e-9

    def test_subsample_cap(self):
        a, b = sphere_set(13, 500), sphere_set(14, 400)
        assert w2_empirical(a, b, max_n=100, seed=1) == w2_empirical(a, b, max_n=100, seed=1)
        assert w2_empirical(a, b, max_n=100, seed=1) != w2_empirical(a, b, max_n=100, seed=2)

    def test_errors(self):
        empty = SampleSet(SPHERE, np.zeros((0, 3)))
        with pytest.raises(SizeError):
            w2_empirical(empty, sphere_set(1, 3))
        with pytest.raises(ConfigError):
            w2_empirical(sphere_set(1, 3), sample_uniform(SO3, 3, 1))


class TestKL:
    def test_same_law(self):
        assert abs(kl_knn(sphere_set(15, 10_000), sphere_set(16, 10_000), 5)) <= 0.05

    def test_same_law_so3(self):
        assert kl_knn(sample_uniform(SO3, 10_000, 17), sample_uniform(SO3, 10_000, 18), 5) >= -0.05

    def test_vmf_closed_form(self):
        spec = MixtureSpec(np.array([[0.0, 0.0, 1.0]]), [256.0])
        est = kl_knn(sample_vmf_mixture(spec, 10_000, 19), sphere_set(20, 10_000), 5)
        exact = vmf_vs_uniform_kl(256.0)
        assert abs(est - exact) <= 0.15 * exact

    def test_identical_arrays(self):
        a = sphere_set(21, 100)
        with pytest.raises(DegeneracyError):
            kl_knn(a, a, 5)

    def test_sizes(self):
        with pytest.raises(SizeError):
            kl_knn(sphere_set(22, 5), sphere_set(23, 100), 5)


class TestReport:
    def test_round_trip(self, tmp_path):
        rep = MetricsReport(w2=0.25, mean_nll=-1.5, seed=3, slopes={"esde-em": 0.5},
                            sizes={"generated": 10}, config={"run.route": "s2"})
        rep.set_kl(-0.01)
        assert rep.kl == 0.0 and rep.kl_raw == -0.01
        rep.write(tmp_path / "m.txt")
        lines = (tmp_path / "m.txt").read_text().splitlines()
        assert "w2=0.25" in lines and "slope.esde-em=0.5" in lines
        back = MetricsReport.read(tmp_path / "m.txt")
        assert back == rep


class TestBench:
    def test_fit_order(self):
        dt = np.array([0.1, 0.05, 0.025])
        assert fit_order(dt, 3.0 * dt**0.5) == pytest.approx(0.5, abs=1e-12)

    def test_level_checks(self):
        with pytest.raises(ConfigError):
            convergence_bench(["esde-em"], 0.5, [16, 32, 64], 10_000)
        with pytest.raises(ConfigError):
            convergence_bench(["esde-em"], 0.5, [16, 32, 48, 96], 10_000)
        with pytest.raises(ConfigError):
            convergence_bench(["esde-em"], 0.5, [16, 32, 64, 128], 100)
        with pytest.raises(ConfigError):
            convergence_bench(["ode-rk4"], 0.5, [16, 32, 64, 128], 10_000)

    def test_strong_errors_shrink(self):
        res = convergence_bench(["esde-em"], 0.5, [4, 8, 16, 32], 10_000, seed=1)
        err = res.errors["esde-em"]
        assert np.all(np.diff(err) < 0)
        assert 0.25 <= res.slopes["esde-em"] <= 0.75
