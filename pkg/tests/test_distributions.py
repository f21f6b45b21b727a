"""Priors, synthetic targets, densities and CSV ingestion."""

import math

import numpy as np
import pytest
from scipy import stats

from geointerp.distributions import (
    MixtureSpec,
    SampleSet,
    density_uniform,
    density_vmf_mixture,
    ingest_latlon_csv,
    load_samples,
    log_density_vmf_mixture,
    random_vmf_mixture,
    sample_uniform,
    sample_vmf_mixture,
    sample_wrapped_gaussian_so3,
    save_samples,
    sphere_volume,
    vmf_mean_resultant,
)
from geointerp.errors import ConfigError, ParseError, RangeError
from geointerp.manifold import SO3, SPHERE, so3_angle, so3_exp

# frozen with mpmath at 30 digits: 256 / (4 pi sinh 256) * exp(256)
VMF256_AT_MODE = 40.7436654315252059568
# mean of the 3-dim chi distribution scaled by sigma = 0.1
CHI3_MEAN_SIGMA01 = 0.159576912160573071


def _write(tmp_path, text, name="pts.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestUniform:
    def test_sphere_mean(self):
        s = sample_uniform(SPHERE, 100_000, 1)
        np.testing.assert_allclose(np.linalg.norm(s.points, axis=1), 1.0, atol=1e-15)
        assert np.linalg.norm(s.points.mean(axis=0)) <= 0.01

    def test_haar_trace(self):
        s = sample_uniform(SO3, 100_000, 2)
        assert abs(np.trace(s.points, axis1=1, axis2=2).mean()) <= 0.02

    def test_single_point(self):
        s = sample_uniform(SO3, 1, 3)
        assert len(s) == 1
        r = s.points[0]
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)

    def test_higher_sphere(self):
        s = sample_uniform(SPHERE, 10, 4, dim=5)
        assert s.points.shape == (10, 6)

    def test_deterministic(self):
        a = sample_uniform(SPHERE, 50_000, 7)
        b = sample_uniform(SPHERE, 50_000, 7)
        np.testing.assert_array_equal(a.points, b.points)
        c = sample_uniform(SPHERE, 50_000, 7, threads=3)
        np.testing.assert_array_equal(a.points, c.points)

    def test_haar_left_invariance(self):
        r = sample_uniform(SO3, 100_000, 8).points
        g = so3_exp(np.array([0.3, -1.1, 0.7]))
        r2 = sample_uniform(SO3, 100_000, 9).points
        ks = stats.ks_2samp(np.trace(g @ r, axis1=1, axis2=2), np.trace(r2, axis1=1, axis2=2))
        assert ks.pvalue > 0.01

    def test_count_zero(self):
        with pytest.raises(ConfigError):
            sample_uniform(SPHERE, 0, 1)


class TestVMF:
    def test_concentration_limit(self):
        mu = np.array([[0.0, 0.6, 0.8]])
        s = sample_vmf_mixture(MixtureSpec(mu, [1e6]), 1000, 1)
        ang = np.arccos(np.clip(s.points @ mu[0], -1, 1))
        assert ang.max() < 0.01

    def test_mean_direction(self):
        mu = np.array([1.0, 2.0, 2.0]) / 3.0
        s = sample_vmf_mixture(MixtureSpec(mu[None], [256.0]), 10_000, 2)
        m = s.points.mean(axis=0)
        assert np.arccos(np.clip(m @ mu / np.linalg.norm(m), -1, 1)) <= 0.02
        np.testing.assert_allclose(np.linalg.norm(m), vmf_mean_resultant(256.0), atol=1e-3)

    def test_antipodal_component_counts(self):
        mu = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        n = 20_000
        s = sample_vmf_mixture(MixtureSpec(mu, [50.0, 50.0]), n, 3)
        upper = int(np.sum(s.points[:, 2] > 0))
        assert abs(upper - n / 2) <= 3 * math.sqrt(n / 4)

    def test_random_mixture(self):
        spec = random_vmf_mixture(8, 256.0, 0)
        assert spec.centers.shape == (8, 3)
        np.testing.assert_allclose(spec.weights, 1 / 8)

    def test_bad_weights(self):
        with pytest.raises(ConfigError):
            MixtureSpec(np.eye(3), [1.0, 1.0, 1.0], [0.5, 0.5, 0.5])


class TestWrappedGaussian:
    def test_zero_variance(self):
        centers = sample_uniform(SO3, 3, 1).points
        s = sample_wrapped_gaussian_so3(MixtureSpec(centers, [0.0] * 3), 100, 2)
        d = np.min([so3_angle(np.swapaxes(c, -1, -2) @ s.points) for c in centers], axis=0)
        assert d.max() <= 1e-7

    def test_mean_distance_chi(self):
        center = np.eye(3)[None]
        s = sample_wrapped_gaussian_so3(MixtureSpec(center, [0.01]), 100_000, 3)
        mean = so3_angle(s.points).mean()
        # brute force chi-3 Monte Carlo, independent of the library
        brute = np.linalg.norm(np.random.default_rng(4).standard_normal((1_000_000, 3)), axis=1).mean() * 0.1
        assert abs(mean - brute) <= 0.02 * brute
        assert abs(mean - CHI3_MEAN_SIGMA01) <= 0.02 * CHI3_MEAN_SIGMA01


class TestDensities:
    def test_uniform(self):
        np.testing.assert_allclose(density_uniform(SPHERE, np.eye(3)), 0.0795774715459476679, rtol=1e-15)
        np.testing.assert_allclose(density_uniform(SO3, np.eye(3)[None]), 0.0126651479552922214, rtol=1e-15)
        np.testing.assert_allclose(sphere_volume(2), 4 * math.pi, rtol=1e-15)

    def test_vmf_at_mode_no_overflow(self):
        spec = MixtureSpec(np.array([[0.0, 0.0, 1.0]]), [256.0])
        np.testing.assert_allclose(density_vmf_mixture(spec, np.array([0.0, 0.0, 1.0])), VMF256_AT_MODE, rtol=1e-13)
        assert np.isfinite(log_density_vmf_mixture(spec, np.array([0.0, 0.0, -1.0])))

    def test_vmf_normalisation(self):
        spec = random_vmf_mixture(4, 20.0, 1)
        x = sample_uniform(SPHERE, 1_000_000, 5).points
        vals = density_vmf_mixture(spec, x) * 4 * math.pi
        se = vals.std() / math.sqrt(len(vals))
        assert abs(vals.mean() - 1.0) <= 3 * se


class TestCSV:
    def test_latlon(self, tmp_path):
        p = _write(tmp_path, "lat,lon\n90,0\n0,0\n0,90\n")
        s = ingest_latlon_csv(p)
        np.testing.assert_allclose(s.points, [[0, 0, 1], [1, 0, 0], [0, 1, 0]], atol=1e-15)

    def test_bad_header(self, tmp_path):
        with pytest.raises(ParseError, match="line 1"):
            ingest_latlon_csv(_write(tmp_path, "x,y\n1,2\n"))

    def test_malformed_row(self, tmp_path):
        with pytest.raises(ParseError, match="line 3"):
            ingest_latlon_csv(_write(tmp_path, "lat,lon\n1,2\nabc,3\n"))

    def test_out_of_range(self, tmp_path):
        with pytest.raises(RangeError):
            ingest_latlon_csv(_write(tmp_path, "lat,lon\n91,0\n"))
        with pytest.raises(RangeError):
            ingest_latlon_csv(_write(tmp_path, "lat,lon\n0,-180\n"))

    @pytest.mark.parametrize("manifold", [SPHERE, SO3])
    def test_round_trip(self, tmp_path, manifold):
        s = sample_uniform(manifold, 50, 6)
        save_samples(tmp_path / "s.csv", s)
        back = load_samples(tmp_path / "s.csv")
        assert back.manifold == manifold
        np.testing.assert_array_equal(back.points, s.points)

    def test_sampleset_shape_check(self):
        with pytest.raises(ValueError):
            SampleSet(SO3, np.zeros((4, 9)))
