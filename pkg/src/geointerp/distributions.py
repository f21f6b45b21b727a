"""Priors, synthetic targets and sample I/O.

Sampling is chunked: the index range is split into fixed blocks of
``CHUNK`` points and block ``i`` draws from its own stream seeded by
``(seed, i)``.  Results therefore depend only on ``(spec, count, seed)``,
never on how many workers produced the blocks.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError, ParseError, RangeError
from .manifold import SO3, SPHERE, quaternion_to_rotation, so3_exp

CHUNK = 1 << 15


@dataclass
class SampleSet:
    manifold: str
    points: np.ndarray
    seed: int | None = None
    source: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.manifold == SO3:
            if self.points.ndim != 3 or self.points.shape[1:] != (3, 3):
                raise ValueError("SO(3) samples must have shape (N, 3, 3)")
        elif self.manifold == SPHERE:
            if self.points.ndim != 2:
                raise ValueError("sphere samples must have shape (N, n+1)")
        else:
            raise ValueError(f"unknown manifold tag {self.manifold!r}")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return 9 if self.manifold == SO3 else self.points.shape[1]

    def flat(self) -> np.ndarray:
        return self.points.reshape(len(self), -1)


@dataclass
class MixtureSpec:
    """Mixture of centred components.

    ``concentrations`` holds the vMF concentration kappa for sphere mixtures
    and the per-axis variance sigma^2 for wrapped Gaussians on SO(3).
    """

    centers: np.ndarray
    concentrations: np.ndarray
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        k = self.centers.shape[0]
        self.concentrations = np.broadcast_to(
            np.asarray(self.concentrations, dtype=np.float64), (k,)
        ).copy()
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (k,):
            raise ConfigError("one weight per component is required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("mixture weights must lie on the simplex")
        if np.any(self.concentrations < 0):
            raise ConfigError("concentrations must be nonnegative")

    @property
    def manifold(self) -> str:
        return SO3 if self.centers.ndim == 3 else SPHERE


def _chunked(count: int, seed: int, draw: Callable, threads: int = 1) -> np.ndarray:
    if count < 1:
        raise ConfigError("sample count must be at least 1")
    blocks = [(i, min(CHUNK, count - i * CHUNK)) for i in range(-(-count // CHUNK))]

    def run(block):
        i, m = block
        return draw(np.random.default_rng([seed, i]), m)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return np.concatenate(parts, axis=0)


def _uniform_sphere(rng, m, dim):
    g = rng.standard_normal((m, dim + 1))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _uniform_so3(rng, m):
    q = rng.standard_normal((m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return quaternion_to_rotation(q)


def sample_uniform(manifold: str, count: int, seed: int, dim: int = 2, threads: int = 1) -> SampleSet:
    """Uniform law on S^dim (normalised Gaussians) or Haar law on SO(3)."""
    if manifold == SPHERE:
        pts = _chunked(count, seed, lambda rng, m: _uniform_sphere(rng, m, dim), threads)
    elif manifold == SO3:
        pts = _chunked(count, seed, _uniform_so3, threads)
    else:
        raise ConfigError(f"unknown manifold tag {manifold!r}")
    return SampleSet(manifold, pts, seed, f"uniform:{manifold}")


def _frame_to(mu):
    """Rotation matrices whose third column is ``mu`` (one per row)."""
    mu = np.atleast_2d(mu)
    a = np.zeros_like(mu)
    a[np.arange(len(mu)), np.argmin(np.abs(mu), axis=1)] = 1.0
    e1 = a - np.sum(a * mu, axis=1, keepdims=True) * mu
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(mu, e1)
    return np.stack([e1, e2, mu], axis=-1)


def _vmf_s2(rng, mu, kappa):
    m = len(mu)
    u = 1.0 - rng.random(m)  # in (0, 1]
    w = 1.0 + np.log(u + (1.0 - u) * np.exp(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi, m)
    r = np.sqrt(np.maximum(0.0, 1.0 - w * w))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), w], axis=1)
    return np.einsum("nij,nj->ni", _frame_to(mu), local)


def sample_vmf_mixture(spec: MixtureSpec, count: int, seed: int, threads: int = 1) -> SampleSet:
    """vMF mixture on S^2 via the exact inverse CDF of the cosine."""
    if spec.manifold != SPHERE or spec.centers.shape[1] != 3:
        raise ConfigError("vMF mixture sampling is defined on S^2")
    if np.any(spec.concentrations <= 0):
        raise ConfigError("vMF concentrations must be positive")

    def draw(rng, m):
        comp = rng.choice(len(spec.weights), size=m, p=spec.weights)
        return _vmf_s2(rng, spec.centers[comp], spec.concentrations[comp])

    pts = _chunked(count, seed, draw, threads)
    return SampleSet(SPHERE, pts, seed, f"vmf_mixture:K={len(spec.weights)}")


def sample_wrapped_gaussian_so3(spec: MixtureSpec, count: int, seed: int, threads: int = 1) -> SampleSet:
    """Wrapped Gaussian mixture ``p_i Exp(w)``, ``w ~ N(0, sigma_i^2 I)`` with ``|w| < pi``."""
    if spec.manifold != SO3:
        raise ConfigError("wrapped Gaussian sampling is defined on SO(3)")
    sig = np.sqrt(spec.concentrations)

    def draw(rng, m):
        comp = rng.choice(len(spec.weights), size=m, p=spec.weights)
        w = rng.standard_normal((m, 3)) * sig[comp, None]
        bad = np.linalg.norm(w, axis=1) >= np.pi
        while np.any(bad):
            w[bad] = rng.standard_normal((int(bad.sum()), 3)) * sig[comp[bad], None]
            bad = np.linalg.norm(w, axis=1) >= np.pi
        return spec.centers[comp] @ so3_exp(w)

    pts = _chunked(count, seed, draw, threads)
    return SampleSet(SO3, pts, seed, f"wrapped_gaussian:K={len(spec.weights)}")


def random_vmf_mixture(k: int, kappa: float, seed: int) -> MixtureSpec:
    centers = sample_uniform(SPHERE, k, seed).points
    return MixtureSpec(centers, np.full(k, float(kappa)))


def random_wrapped_mixture(k: int, sigma2: float, seed: int) -> MixtureSpec:
    centers = sample_uniform(SO3, k, seed).points
    return MixtureSpec(centers, np.full(k, float(sigma2)))


# ---------------------------------------------------------------------------
# Densities (log-space internally)
# ---------------------------------------------------------------------------


def sphere_volume(dim: int) -> float:
    return math.exp(math.log(2.0) + 0.5 * (dim + 1) * math.log(math.pi) - gammaln(0.5 * (dim + 1)))


SO3_VOLUME = 8.0 * math.pi**2


def log_density_uniform(manifold: str, x, dim: int = 2) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if manifold == SPHERE:
        vol = sphere_volume(x.shape[-1] - 1)
        shape = x.shape[:-1]
    elif manifold == SO3:
        vol = SO3_VOLUME
        shape = x.shape[:-2]
    else:
        raise ConfigError(f"unknown manifold tag {manifold!r}")
    return np.full(shape, -math.log(vol))


def density_uniform(manifold: str, x) -> np.ndarray:
    return np.exp(log_density_uniform(manifold, x))


def log_vmf_normalizer(kappa) -> np.ndarray:
    """``log(kappa / (4 pi sinh kappa))`` without overflow."""
    kappa = np.asarray(kappa, dtype=np.float64)
    log_sinh = kappa + np.log1p(-np.exp(-2.0 * kappa)) - math.log(2.0)
    return np.log(kappa) - math.log(4.0 * math.pi) - log_sinh


def log_density_vmf_mixture(spec: MixtureSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    terms = (
        np.log(spec.weights)
        + log_vmf_normalizer(spec.concentrations)
        + spec.concentrations * (x @ spec.centers.T)
    )
    return logsumexp(terms, axis=-1)


def density_vmf_mixture(spec: MixtureSpec, x) -> np.ndarray:
    return np.exp(log_density_vmf_mixture(spec, x))


def vmf_mean_resultant(kappa: float) -> float:
    """``A(kappa) = coth(kappa) - 1/kappa`` on S^2."""
    return 1.0 / math.tanh(kappa) - 1.0 / kappa


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def ingest_latlon_csv(path) -> SampleSet:
    """Read ``lat,lon`` degrees into unit vectors on S^2, preserving row order."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["lat", "lon"]:
            raise ParseError("expected header 'lat,lon'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                lat, lon = float(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"non-numeric value in {row!r}", line=lineno) from None
            if not (-90.0 <= lat <= 90.0) or not (-180.0 < lon <= 180.0):
                raise RangeError(f"line {lineno}: coordinate ({lat}, {lon}) out of range")
            rows.append((lat, lon))
    if not rows:
        raise ParseError("no data rows", line=2)
    ll = np.radians(np.array(rows))
    phi, lam = ll[:, 0], ll[:, 1]
    pts = np.stack([np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)], axis=1)
    return SampleSet(SPHERE, pts, None, f"csv:{Path(path).name}")


def save_samples(path, samples: SampleSet) -> None:
    flat = samples.flat()
    header = ",".join(f"c{i}" for i in range(flat.shape[1]))
    np.savetxt(path, flat, delimiter=",", header=header, comments="", fmt="%.17g")


def load_samples(path, seed: int | None = None) -> SampleSet:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if not header or any(h != f"c{i}" for i, h in enumerate(header)):
        raise ParseError("expected header c0,c1,...", line=1)
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if data.shape[1] != len(header):
        raise ParseError("column count does not match header")
    if data.shape[1] == 9:
        return SampleSet(SO3, data.reshape(-1, 3, 3), seed, f"file:{Path(path).name}")
    return SampleSet(SPHERE, data, seed, f"file:{Path(path).name}")
