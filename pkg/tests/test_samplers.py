"""GRW, embedded SDE and ODE samplers, and the likelihood ODE."""

import math

import numpy as np
import pytest
from scipy import stats

from geointerp.errors import ConfigError
from geointerp.fields import FieldNet, LinearField, PerturbedDrift, ZeroField
from geointerp.manifold import hat, sphere_dist
from geointerp.samplers import (
    SamplerConfig,
    esde_sample,
    grw_sample,
    grw_step,
    nll_ode,
    ode_sample,
    sample,
    save_trajectory_csv,
)

E1, E2, E3 = np.eye(3)
LOG_4PI = math.log(4 * math.pi)


def uniform_sphere(rng, m, dim=2):
    g = rng.standard_normal((m, dim + 1))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def uniform_log_density(x):
    return np.full(len(x), -LOG_4PI)


def rotation_field(axis):
    """Killing field x -> axis x x on S^2."""
    return LinearField(hat(np.asarray(axis, dtype=np.float64)))


class TestConfig:
    def test_invalid(self):
        with pytest.raises(ConfigError):
            SamplerConfig(scheme="leapfrog")
        with pytest.raises(ConfigError):
            SamplerConfig(steps=0)
        with pytest.raises(ConfigError):
            SamplerConfig(epsilon=-1.0)

    def test_degradation(self):
        assert SamplerConfig("grw", epsilon=0.0).resolved() == ("ode-euler", 0.0, True)
        assert SamplerConfig("esde-em", epsilon=0.1).resolved() == ("esde-em", 0.1, False)
        assert SamplerConfig("ode-rk4", epsilon=0.3).resolved() == ("ode-rk4", 0.0, False)

    def test_wrapper_scheme_checks(self):
        x = uniform_sphere(np.random.default_rng(0), 3)
        with pytest.raises(ConfigError):
            grw_sample(ZeroField(), x, SamplerConfig("esde-em"))
        with pytest.raises(ConfigError):
            esde_sample(ZeroField(), x, SamplerConfig("grw"))
        with pytest.raises(ConfigError):
            ode_sample(ZeroField(), x, SamplerConfig("grw"))


class TestGRW:
    def test_no_drift_no_noise(self):
        x = uniform_sphere(np.random.default_rng(1), 5)
        out, clamped = grw_step(ZeroField(), 0.0, x, 0.01, eps=0.0)
        np.testing.assert_array_equal(out, x)
        assert clamped == 0

    def test_exact_geodesic_step(self):
        x = uniform_sphere(np.random.default_rng(2), 50)
        field = rotation_field([0.0, 0.0, 1.3])
        dt = 0.1
        out, _ = grw_step(field, 0.0, x, dt, eps=0.0)
        speed = np.linalg.norm(field(0.0, x), axis=1)
        np.testing.assert_allclose(sphere_dist(x, out), speed * dt, atol=1e-12)

    def test_clamp_counted(self):
        x = np.tile(E1, (2000, 1))
        res = sample(ZeroField(), x, SamplerConfig("grw", steps=1, epsilon=5.0, seed=3))
        assert res.clamp_events > 0
        assert any("clamped" in w for w in res.warnings)
        np.testing.assert_allclose(np.linalg.norm(res.points, axis=1), 1.0, atol=1e-12)

    def test_zero_epsilon_degrades_to_ode(self):
        rng = np.random.default_rng(4)
        x = uniform_sphere(rng, 100)
        field = rotation_field([0.3, -0.2, 0.9])
        grw = sample(field, x, SamplerConfig("grw", steps=20, epsilon=0.0))
        ode = sample(field, x, SamplerConfig("ode-euler", steps=20))
        assert grw.degraded and grw.warnings
        np.testing.assert_array_equal(grw.points, ode.points)

    @pytest.mark.slow
    def test_heat_kernel_moment(self):
        x0 = np.tile(E1, (100_000, 1))
        res = sample(ZeroField(), x0, SamplerConfig("grw", steps=200, epsilon=0.5, seed=5))
        assert abs(res.points[:, 0].mean() - math.exp(-1.0)) <= 0.01


class TestESDE:
    def test_zero_noise_equals_euler(self):
        rng = np.random.default_rng(6)
        x = uniform_sphere(rng, 100)
        net = FieldNet.create(3, [8], seed=6)
        ode = sample(PerturbedDrift(net), x, SamplerConfig("ode-euler", steps=30))
        for scheme in ("esde-em", "esde-heun"):
            res = sample(PerturbedDrift(net), x, SamplerConfig(scheme, steps=30, epsilon=0.0))
            np.testing.assert_allclose(res.points, ode.points, atol=1e-12)

    @pytest.mark.parametrize("scheme", ["esde-em", "esde-heun"])
    def test_stays_on_sphere(self, scheme):
        x = uniform_sphere(np.random.default_rng(7), 500, dim=5)
        res = sample(ZeroField(), x, SamplerConfig(scheme, steps=10, epsilon=0.3, seed=7))
        np.testing.assert_allclose(np.linalg.norm(res.points, axis=1), 1.0, atol=1e-12)

    @pytest.mark.slow
    def test_heat_kernel_moment_heun(self):
        x0 = np.tile(E1, (100_000, 1))
        res = sample(ZeroField(), x0, SamplerConfig("esde-heun", steps=200, epsilon=0.5, seed=8))
        assert abs(res.points[:, 0].mean() - math.exp(-1.0)) <= 0.01

    @pytest.mark.slow
    @pytest.mark.parametrize("scheme", ["esde-heun", "grw"])
    def test_uniform_is_stationary(self, scheme):
        n = 100_000
        x0 = uniform_sphere(np.random.default_rng(9), n)
        res = sample(ZeroField(), x0, SamplerConfig(scheme, steps=50, epsilon=0.4, seed=9))
        crit = 1.63 * math.sqrt(2.0 / n)  # two-sample KS critical value at the 1% level
        for k in range(3):
            assert stats.ks_2samp(x0[:, k], res.points[:, k]).statistic < crit


class TestODE:
    def test_zero_drift_identity(self):
        x = uniform_sphere(np.random.default_rng(10), 20)
        for scheme in ("ode-euler", "ode-rk4"):
            np.testing.assert_allclose(sample(ZeroField(), x, SamplerConfig(scheme, 10)).points, x, atol=1e-15)

    def test_single_pair_geodesic_field(self):
        x0 = np.array([[0.6, 0.0, 0.8]])
        x1 = np.array([[0.0, 1.0, 0.0]])
        axis = np.cross(x0[0], x1[0])
        theta = sphere_dist(x0, x1)[0]
        field = rotation_field(axis / np.linalg.norm(axis) * theta)
        out = sample(field, x0, SamplerConfig("ode-rk4", 100)).points
        assert np.max(np.abs(out - x1)) <= 1e-6

    def test_forward_backward_round_trip(self):
        rng = np.random.default_rng(11)
        net = FieldNet.create(3, [16, 16], seed=11)
        x0 = uniform_sphere(rng, 200)
        fwd = sample(PerturbedDrift(net), x0, SamplerConfig("ode-rk4", 1000)).points
        back = sample(PerturbedDrift(net), fwd, SamplerConfig("ode-rk4", 1000, direction="backward")).points
        assert np.max(np.abs(back - x0)) <= 1e-4

    def test_backward_plain_callable(self):
        x = uniform_sphere(np.random.default_rng(12), 10)
        field = rotation_field([0.0, 0.0, 1.0])
        fwd = sample(field, x, SamplerConfig("ode-rk4", 50)).points
        back = sample(field, fwd, SamplerConfig("ode-rk4", 50, direction="backward")).points
        np.testing.assert_allclose(back, x, atol=1e-10)
        with pytest.raises(ConfigError):
            sample(field, x, SamplerConfig("esde-em", 5, epsilon=0.1, direction="backward"))


class TestBatching:
    def test_threads_do_not_change_results(self):
        x = uniform_sphere(np.random.default_rng(13), 9000)
        cfg1 = SamplerConfig("esde-heun", steps=5, epsilon=0.2, seed=13, threads=1)
        cfg3 = SamplerConfig("esde-heun", steps=5, epsilon=0.2, seed=13, threads=3)
        np.testing.assert_array_equal(sample(ZeroField(), x, cfg1).points, sample(ZeroField(), x, cfg3).points)

    def test_schemes_share_noise(self):
        # with tiny dt both schemes follow the same Brownian path closely
        x = np.tile(E1, (200, 1))
        a = sample(ZeroField(), x, SamplerConfig("esde-em", steps=400, epsilon=0.05, seed=14)).points
        b = sample(ZeroField(), x, SamplerConfig("grw", steps=400, epsilon=0.05, seed=14)).points
        assert np.median(sphere_dist(a, b)) < 0.02

    def test_trajectory(self, tmp_path):
        x = uniform_sphere(np.random.default_rng(15), 4)
        res = sample(rotation_field([0, 0, 1.0]), x, SamplerConfig("ode-rk4", 8), record=True)
        assert res.trajectory.states.shape == (9, 4, 3)
        np.testing.assert_array_equal(res.trajectory.states[-1], res.points)
        save_trajectory_csv(tmp_path / "t.csv", res.trajectory, 2)
        rows = (tmp_path / "t.csv").read_text().splitlines()
        assert rows[0] == "t,c0,c1,c2" and len(rows) == 10


class TestLikelihood:
    def test_zero_field(self):
        x = uniform_sphere(np.random.default_rng(16), 100)
        nll = nll_ode(ZeroField(), x, uniform_log_density, SamplerConfig("ode-rk4", 20))
        np.testing.assert_allclose(nll, LOG_4PI, atol=1e-6)

    def test_killing_field(self):
        x = uniform_sphere(np.random.default_rng(17), 100)
        nll = nll_ode(rotation_field([0.4, -0.7, 0.2]), x, uniform_log_density, SamplerConfig("ode-rk4", 50))
        np.testing.assert_allclose(nll, LOG_4PI, atol=1e-5)

    def test_linear_field_change_of_variables(self):
        # a non-Killing field must move the density, and its trajectory log-det is recorded
        a = np.diag([0.5, 0.0, -0.5])
        x = uniform_sphere(np.random.default_rng(18), 50)
        nll, traj = nll_ode(LinearField(a), x, uniform_log_density, SamplerConfig("ode-rk4", 40), record=True)
        assert np.std(nll) > 1e-3
        assert traj.logdet.shape == (41, 50)

    def test_needs_divergence(self):
        with pytest.raises(ConfigError):
            nll_ode(lambda t, x: x * 0, E1[None], uniform_log_density, SamplerConfig("ode-rk4", 2))
