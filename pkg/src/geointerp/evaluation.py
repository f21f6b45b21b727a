"""Sample-based metrics: exact empirical W2 with geodesic cost, k-NN KL
divergence, and the discretisation-order benchmark for the samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .distributions import SampleSet
from .errors import ConfigError, DegeneracyError, SizeError
from .fields import ZeroField
from .manifold import SO3, SO3_FROBENIUS_SCALE
from .samplers import esde_em_step, esde_heun_step, grw_step

DEFAULT_MAX_N = 2048


def _check_pair(a: SampleSet, b: SampleSet):
    if a.manifold != b.manifold or a.ambient_dim != b.ambient_dim:
        raise ConfigError("sample sets live on different manifolds")
    if len(a) == 0 or len(b) == 0:
        raise SizeError("sample sets must be nonempty")


def chordal_to_geodesic(manifold: str, chord):
    """Map ambient Euclidean (Frobenius on SO(3)) distances to geodesic ones.

    Both relations are monotone, so nearest neighbours agree in either metric.
    """
    chord = np.asarray(chord, dtype=np.float64)
    if manifold == SO3:
        # |A - B|_F = 2 sqrt(2) sin(angle / 2)
        return 2.0 * np.arcsin(np.clip(chord / (2.0 * SO3_FROBENIUS_SCALE), 0.0, 1.0))
    return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))


def geodesic_cost_matrix(a: SampleSet, b: SampleSet) -> np.ndarray:
    """Squared geodesic distances between all pairs."""
    chord = cdist(a.flat(), b.flat())
    return chordal_to_geodesic(a.manifold, chord) ** 2


def w2_empirical(a: SampleSet, b: SampleSet, max_n: int = DEFAULT_MAX_N, seed: int = 0) -> float:
    """Exact W2 between equal-size subsamples under squared geodesic cost."""
    _check_pair(a, b)
    n = min(len(a), len(b), max_n)
    rng = np.random.default_rng(seed)
    ia = np.sort(rng.choice(len(a), n, replace=False)) if len(a) > n else np.arange(n)
    ib = np.sort(rng.choice(len(b), n, replace=False)) if len(b) > n else np.arange(n)
    sa = SampleSet(a.manifold, a.points[ia])
    sb = SampleSet(b.manifold, b.points[ib])
    cost = geodesic_cost_matrix(sa, sb)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def manifold_dim(s: SampleSet) -> int:
    return 3 if s.manifold == SO3 else s.points.shape[1] - 1


def kl_knn(p: SampleSet, q: SampleSet, k: int = 5) -> float:
    """k-nearest-neighbour estimate of KL(p || q) with geodesic distances.

    ``D = (dim / n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1))`` where
    ``rho_k`` is the k-th neighbour distance within ``p`` (self excluded) and
    ``nu_k`` the k-th neighbour distance from ``p_i`` into ``q``; ``dim`` is
    the intrinsic manifold dimension.  Returns the raw (possibly negative)
    value.
    """
    _check_pair(p, q)
    n, m = len(p), len(q)
    if n < k + 1 or m < k:
        raise SizeError(f"need at least {k + 1} samples of p and {k} of q")
    fp, fq = p.flat(), q.flat()
    rho_all = cKDTree(fp).query(fp, k + 1)[0]
    nu_all = np.atleast_2d(cKDTree(fq).query(fp, k)[0].T).T
    # any coincident pair (first neighbour at distance 0) makes log ratios meaningless
    if np.any(rho_all[:, 1] <= 0.0) or np.any(nu_all[:, 0] <= 0.0):
        raise DegeneracyError("coincident samples give zero neighbour distances")
    rho = chordal_to_geodesic(p.manifold, rho_all[:, k])
    nu = chordal_to_geodesic(p.manifold, nu_all[:, k - 1])
    dim = manifold_dim(p)
    return float(dim * np.mean(np.log(nu / rho)) + math.log(m / (n - 1)))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    w2: float | None = None
    kl: float | None = None
    kl_raw: float | None = None
    mean_nll: float | None = None
    slopes: dict[str, float] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)
    seed: int | None = None
    config: dict[str, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def set_kl(self, raw: float) -> None:
        self.kl_raw = raw
        self.kl = max(raw, 0.0)

    def to_lines(self) -> list[str]:
        lines = []
        for key in ("w2", "kl", "kl_raw", "mean_nll", "seed"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key}={val!r}")
        for name, val in sorted(self.slopes.items()):
            lines.append(f"slope.{name}={val!r}")
        for name, val in sorted(self.sizes.items()):
            lines.append(f"size.{name}={val}")
        for name, val in sorted(self.config.items()):
            lines.append(f"config.{name}={val}")
        for text in self.warnings:
            lines.append(f"warning={text}")
        return lines

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def read(cls, path) -> "MetricsReport":
        rep = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                key, _, val = line.partition("=")
                if key.startswith("slope."):
                    rep.slopes[key[6:]] = float(val)
                elif key.startswith("size."):
                    rep.sizes[key[5:]] = int(val)
                elif key.startswith("config."):
                    rep.config[key[7:]] = val
                elif key == "warning":
                    rep.warnings.append(val)
                elif key == "seed":
                    rep.seed = int(val)
                elif key in ("w2", "kl", "kl_raw", "mean_nll"):
                    setattr(rep, key, float(val))
        return rep


# ---------------------------------------------------------------------------
# Convergence benchmark
# ---------------------------------------------------------------------------

BENCH_CHUNK = 1 << 16


@dataclass
class BenchResult:
    slopes: dict[str, float]
    errors: dict[str, np.ndarray]
    dts: dict[str, np.ndarray]


def fit_order(dts, errors) -> float:
    """Least-squares slope of ``log error`` against ``log dt``."""
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def _check_levels(levels):
    levels = [int(s) for s in levels]
    if len(levels) < 4:
        raise ConfigError("the benchmark needs at least 4 step levels")
    if any(b != 2 * a for a, b in zip(levels[:-1], levels[1:])):
        raise ConfigError("step counts must double from level to level (dt halves)")
    return levels


def _strong_errors(scheme, eps, levels, paths, seed, dim, drift, refine=8):
    step = esde_em_step if scheme == "esde-em" else esde_heun_step
    n_ref = refine * levels[-1]
    h_ref = 1.0 / n_ref
    ratios = [n_ref // n for n in levels]
    x_start = np.zeros(dim + 1)
    x_start[0] = 1.0
    err_sum = np.zeros(len(levels))
    for c, lo in enumerate(range(0, paths, BENCH_CHUNK)):
        m = min(BENCH_CHUNK, paths - lo)
        rng = np.random.default_rng([seed, c])
        ref = np.tile(x_start, (m, 1))
        xs = [ref.copy() for _ in levels]
        acc = [np.zeros_like(ref) for _ in levels]
        for j in range(n_ref):
            dw = rng.standard_normal(ref.shape) * math.sqrt(h_ref)
            ref = step(drift, j * h_ref, ref, h_ref, dw, eps)
            for i, r in enumerate(ratios):
                acc[i] += dw
                if (j + 1) % r == 0:
                    t = (j + 1 - r) * h_ref
                    xs[i] = step(drift, t, xs[i], r * h_ref, acc[i], eps)
                    acc[i][:] = 0.0
        for i in range(len(levels)):
            err_sum[i] += np.linalg.norm(xs[i] - ref, axis=1).sum()
    return err_sum / paths


def _grw_weak_errors(eps, levels, paths, seed, dim, drift):
    x_start = np.zeros(dim + 1)
    x_start[0] = 1.0
    exact = math.exp(-eps * dim)
    errs = []
    for li, n in enumerate(levels):
        total = 0.0
        for c, lo in enumerate(range(0, paths, BENCH_CHUNK)):
            m = min(BENCH_CHUNK, paths - lo)
            rng = np.random.default_rng([seed, li, c])
            x = np.tile(x_start, (m, 1))
            h = 1.0 / n
            for j in range(n):
                x, _ = grw_step(drift, j * h, x, h, rng, eps=eps)
            total += x[:, 0].sum()
        errs.append(abs(total / paths - exact))
    return np.array(errs)


def convergence_bench(schemes, eps: float, steps, paths: int, seed: int = 0, dim: int = 2,
                      drift=None) -> BenchResult:
    """Fit discretisation orders for Brownian motion on S^dim started at e_1.

    E-SDE schemes: strong error ``E|X_1^dt - X_1^ref|`` against a common-noise
    reference run of the same scheme 8x finer than the finest level.  GRW:
    weak error ``|E<X_1, e_1> - exp(-eps dim)|`` (heat-kernel first moment,
    zero drift only).  ``steps`` is a list of step counts, doubling, or a dict
    mapping scheme to such a list.
    """
    if paths < 10_000:
        raise ConfigError("the benchmark needs at least 10^4 paths")
    if eps <= 0:
        raise ConfigError("the benchmark needs a positive epsilon")
    drift = ZeroField() if drift is None else drift
    slopes, errors, dts = {}, {}, {}
    for scheme in schemes:
        levels = _check_levels(steps[scheme] if isinstance(steps, dict) else steps)
        if scheme in ("esde-em", "esde-heun"):
            err = _strong_errors(scheme, eps, levels, paths, seed, dim, drift)
        elif scheme == "grw":
            if not isinstance(drift, ZeroField):
                raise ConfigError("the GRW weak-error oracle assumes zero drift")
            err = _grw_weak_errors(eps, levels, paths, seed, dim, drift)
        else:
            raise ConfigError(f"no convergence benchmark for scheme {scheme!r}")
        dt = 1.0 / np.array(levels, dtype=np.float64)
        slopes[scheme] = fit_order(dt, err)
        errors[scheme] = err
        dts[scheme] = dt
    return BenchResult(slopes, errors, dts)
