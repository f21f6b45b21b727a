"""Generation on S^n: geodesic random walk, embedded SDE and ODE flows, and
the likelihood ODE.

Every scheme steps a batch of paths in ambient coordinates and retracts to the
sphere after each step.  Paths are processed in fixed chunks of
``PATH_CHUNK``; chunk ``i`` draws its increments from the stream seeded by
``(seed, i)``.  All schemes draw one ``(m, n+1)`` standard normal block per
step, so GRW, E-SDE Euler-Maruyama and E-SDE Euler-Heun see identical driving
noise under a common seed (GRW uses the tangent projection of it, which is an
isotropic standard Gaussian in the tangent plane).
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .fields import PerturbedDrift, ReversedDrift
from .manifold import SPHERE, retract, sphere_exp, sphere_tangent_project

log = logging.getLogger(__name__)

SCHEMES = ("ode-euler", "ode-rk4", "grw", "esde-em", "esde-heun")
STOCHASTIC = ("grw", "esde-em", "esde-heun")
PATH_CHUNK = 4096
GRW_CUT = np.pi - 1e-9
GRW_CLAMP = np.pi - 1e-6


@dataclass
class SamplerConfig:
    scheme: str = "esde-heun"
    steps: int = 100
    epsilon: float = 0.0
    seed: int = 0
    direction: str = "forward"
    threads: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.direction not in ("forward", "backward"):
            raise ConfigError("direction must be 'forward' or 'backward'")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def resolved(self) -> tuple[str, float, bool]:
        """Effective ``(scheme, epsilon, degraded)``.

        ODE schemes run with epsilon 0; a stochastic scheme at epsilon 0
        degrades to ode-euler and reports ``degraded=True``.
        """
        if self.scheme.startswith("ode-"):
            return self.scheme, 0.0, False
        if self.epsilon == 0.0:
            return "ode-euler", 0.0, True
        return self.scheme, self.epsilon, False


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (steps+1, M, d)
    logdet: np.ndarray | None = None  # running -int div along each path


@dataclass
class SamplingResult:
    points: np.ndarray
    scheme: str
    epsilon: float
    degraded: bool = False
    clamp_events: int = 0
    trajectory: Trajectory | None = None
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Single steps
# ---------------------------------------------------------------------------


def _eps_of(drift, t, eps):
    if eps is not None:
        return eps
    return drift.eps_at(t) if hasattr(drift, "eps_at") else 0.0


def grw_step(drift, t, x, dt, rng=None, eps=None, noise=None):
    """One geodesic random walk step ``Exp_x(v_F dt + sqrt(2 eps dt) Z)``.

    ``Z`` is the tangent projection of an ambient standard normal (``noise``
    if given, else drawn from ``rng``).  Tangent steps reaching the cut locus
    are shortened to ``pi - 1e-6``.  Returns ``(x_new, clamped)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    eps = _eps_of(drift, t, eps)
    w = drift(t, x) * dt
    if eps > 0:
        xi = rng.standard_normal(x.shape) if noise is None else noise
        w = w + np.sqrt(2.0 * eps * dt) * sphere_tangent_project(x, xi)
    norm = np.linalg.norm(w, axis=1)
    over = norm >= GRW_CUT
    if np.any(over):
        w[over] *= (GRW_CLAMP / norm[over])[:, None]
    return sphere_exp(x, w), int(over.sum())


def esde_em_step(drift, t, x, dt, dw, eps):
    """Euler-Maruyama on the Ito form ``dX = v_F dt + sqrt(2 eps) P(X) dW - eps n X dt``."""
    n = x.shape[1] - 1
    y = x + drift(t, x) * dt
    y = y + np.sqrt(2.0 * eps) * sphere_tangent_project(x, dw)
    y = y - (eps * n * dt) * x
    return retract(SPHERE, y)


def esde_heun_step(drift, t, x, dt, dw, eps):
    """Euler-Heun for the Stratonovich form: diffusion averaged over a predictor."""
    sig = np.sqrt(2.0 * eps)
    base = x + drift(t, x) * dt
    g0 = sphere_tangent_project(x, dw)
    pred = base + sig * g0
    g1 = sphere_tangent_project(pred, dw)
    return retract(SPHERE, base + sig * 0.5 * (g0 + g1))


def euler_step(drift, t, x, dt):
    return retract(SPHERE, x + drift(t, x) * dt)


def rk4_step(drift, t, x, dt):
    k1 = drift(t, x)
    k2 = drift(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = drift(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = drift(t + dt, x + dt * k3)
    return retract(SPHERE, x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


# ---------------------------------------------------------------------------
# Batch sampling
# ---------------------------------------------------------------------------


def _with_epsilon(drift, eps: float):
    if isinstance(drift, PerturbedDrift):
        return dataclasses.replace(drift, epsilon=eps, schedule=None if eps == 0 else drift.schedule)
    return drift


def _orient(drift, direction: str, eps: float):
    if direction == "forward":
        return drift
    if isinstance(drift, PerturbedDrift):
        return ReversedDrift(drift)
    if eps > 0:
        raise ConfigError("backward stochastic sampling needs a PerturbedDrift (velocity and score)")
    return lambda s, x: -drift(1.0 - np.asarray(s, dtype=np.float64), x)


def _run_chunk(drift, x0, scheme, eps, steps, rng, record):
    dt = 1.0 / steps
    x = np.array(x0, dtype=np.float64)
    states = [x] if record else None
    clamps = 0
    for k in range(steps):
        t = k * dt
        if scheme in STOCHASTIC:
            xi = rng.standard_normal(x.shape)
            dw = xi * np.sqrt(dt)
        if scheme == "ode-euler":
            x = euler_step(drift, t, x, dt)
        elif scheme == "ode-rk4":
            x = rk4_step(drift, t, x, dt)
        elif scheme == "grw":
            x, c = grw_step(drift, t, x, dt, eps=eps, noise=xi)
            clamps += c
        elif scheme == "esde-em":
            x = esde_em_step(drift, t, x, dt, dw, eps)
        else:
            x = esde_heun_step(drift, t, x, dt, dw, eps)
        if record:
            states.append(x)
    return x, clamps, states


def _map_chunks(fn, count, threads):
    chunks = [(i, slice(i * PATH_CHUNK, min(count, (i + 1) * PATH_CHUNK)))
              for i in range(-(-count // PATH_CHUNK))]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda c: fn(*c), chunks))
    return [fn(*c) for c in chunks]


def sample(drift, x0, cfg: SamplerConfig, record: bool = False) -> SamplingResult:
    """Integrate ``dX = v_F dt + sqrt(2 eps) dB`` from ``x0`` over ``[0, 1]``.

    ``drift`` is a PerturbedDrift (its epsilon is replaced by the configured
    one) or any callable ``(t, x) -> tangent`` taken as the full drift.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    scheme, eps, degraded = cfg.resolved()
    warnings = []
    if degraded:
        msg = f"scheme {cfg.scheme} with epsilon=0 degraded to ode-euler"
        log.warning(msg)
        warnings.append(msg)
    f = _orient(_with_epsilon(drift, eps), cfg.direction, eps)

    def run(i, sl):
        rng = np.random.default_rng([cfg.seed, i])
        return _run_chunk(f, x0[sl], scheme, eps, cfg.steps, rng, record)

    parts = _map_chunks(run, len(x0), cfg.threads)
    points = np.concatenate([p[0] for p in parts], axis=0)
    clamps = sum(p[1] for p in parts)
    traj = None
    if record:
        states = np.concatenate([np.stack(p[2]) for p in parts], axis=1)
        traj = Trajectory(np.linspace(0.0, 1.0, cfg.steps + 1), states)
    if clamps:
        warnings.append(f"{clamps} GRW tangent steps clamped at the cut locus")
    return SamplingResult(points, scheme, eps, degraded, clamps, traj, warnings)


def esde_sample(drift, x0, cfg: SamplerConfig, record: bool = False) -> SamplingResult:
    if not cfg.scheme.startswith("esde-"):
        raise ConfigError(f"esde_sample needs an esde-* scheme, got {cfg.scheme}")
    return sample(drift, x0, cfg, record)


def grw_sample(drift, x0, cfg: SamplerConfig, record: bool = False) -> SamplingResult:
    if cfg.scheme != "grw":
        raise ConfigError(f"grw_sample needs scheme grw, got {cfg.scheme}")
    return sample(drift, x0, cfg, record)


def ode_sample(drift, x0, cfg: SamplerConfig, record: bool = False) -> SamplingResult:
    if not cfg.scheme.startswith("ode-"):
        raise ConfigError(f"ode_sample needs an ode-* scheme, got {cfg.scheme}")
    return sample(drift, x0, cfg, record)


# ---------------------------------------------------------------------------
# Likelihood
# ---------------------------------------------------------------------------


def nll_ode(drift, x1, prior_log_density: Callable, cfg: SamplerConfig,
            record: bool = False):
    """Negative log-likelihood of ``x1`` under the ODE pushforward of the prior.

    Integrates backward from ``t = 1`` with classical RK4 on the augmented
    state ``(x, l)``, ``dl/dt = div v``, so that
    ``log rho_1(x1) = log rho_0(X_0) - l``.  ``drift`` must provide
    ``divergence(t, x)``.  Returns the per-sample NLL (and the trajectory when
    ``record``).
    """
    if not hasattr(drift, "divergence"):
        raise ConfigError("likelihood integration needs a drift with a divergence")
    if isinstance(drift, PerturbedDrift):
        drift = dataclasses.replace(drift, epsilon=0.0, schedule=None)
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    steps = cfg.steps
    ds = 1.0 / steps

    def vel(s, x):
        return -drift(1.0 - s, x)

    def div(s, x):
        return drift.divergence(1.0 - s, x)

    def run(i, sl):
        x = x1[sl].copy()
        acc = np.zeros(len(x))
        states, logs = ([x], [acc.copy()]) if record else (None, None)
        for k in range(steps):
            s = k * ds
            k1, d1 = vel(s, x), div(s, x)
            y = x + 0.5 * ds * k1
            k2, d2 = vel(s + 0.5 * ds, y), div(s + 0.5 * ds, y)
            y = x + 0.5 * ds * k2
            k3, d3 = vel(s + 0.5 * ds, y), div(s + 0.5 * ds, y)
            y = x + ds * k3
            k4, d4 = vel(s + ds, y), div(s + ds, y)
            x = retract(SPHERE, x + (ds / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
            acc = acc + (ds / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
            if record:
                states.append(x)
                logs.append(-acc)
        return x, acc, states, logs

    parts = _map_chunks(run, len(x1), cfg.threads)
    x0 = np.concatenate([p[0] for p in parts])
    integral = np.concatenate([p[1] for p in parts])
    nll = -(prior_log_density(x0) - integral)
    if not record:
        return nll
    times = 1.0 - np.linspace(0.0, 1.0, steps + 1)
    states = np.concatenate([np.stack(p[2]) for p in parts], axis=1)
    logs = np.concatenate([np.stack(p[3]) for p in parts], axis=1)
    return nll, Trajectory(times, states, logs)


def save_trajectory_csv(path, traj: Trajectory, path_index: int) -> None:
    """One path as CSV with columns ``t, c0, c1, ...``."""
    pts = traj.states[:, path_index, :]
    header = "t," + ",".join(f"c{i}" for i in range(pts.shape[1]))
    np.savetxt(path, np.column_stack([traj.times, pts]), delimiter=",",
               header=header, comments="", fmt="%.17g")
