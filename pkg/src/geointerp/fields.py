"""Time-conditioned vector fields on S^n and the two training losses.

A :class:`FieldNet` is a plain multilayer perceptron on ``[x, time features]``
whose ambient output ``u`` is projected to the tangent space,
``f(t, x) = u - <u, x> x``.  The divergence of that projected field along an
orthonormal tangent frame ``{e_k}`` at ``x`` reduces to

    div f = -n <x, u> + sum_k <e_k, J_u e_k>,

so each point needs the primal pass plus ``n`` forward-mode tangents through
the network.  Gradients of both losses are obtained by a reverse sweep over
the primal and tangent paths together (the tangent path brings in the second
derivative of the activation).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError
from .interpolant import InterpolantBatch
from .manifold import SPHERE, sphere_tangent_basis, sphere_tangent_project

DEFAULT_TIME_FREQS = 4


def _tanh(a):
    s = np.tanh(a)
    d1 = 1.0 - s * s
    return s, d1, -2.0 * s * d1


def _relu(a):
    pos = a > 0
    return np.where(pos, a, 0.0), pos.astype(np.float64), np.zeros_like(a)


def _silu(a):
    sig = 0.5 * (1.0 + np.tanh(0.5 * a))
    d1 = sig * (1.0 + a * (1.0 - sig))
    d2 = sig * (1.0 - sig) * (2.0 + a * (1.0 - 2.0 * sig))
    return a * sig, d1, d2


ACTIVATIONS = {"tanh": _tanh, "relu": _relu, "silu": _silu}
SMOOTH_ACTIVATIONS = ("tanh", "silu")


def time_features(t, count: int) -> np.ndarray:
    """``[sin(2^k pi t), cos(2^k pi t)]`` for ``k < count``; shape ``(B, 2*count)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.pi * 2.0 ** np.arange(count)
    ang = t[:, None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class FieldNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    time_freqs: int = DEFAULT_TIME_FREQS

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        dims = list(self.layer_dims)
        if len(dims) < 2 or len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ConfigError("layer_dims and parameter lists disagree")
        for w, b, (i, o) in zip(self.weights, self.biases, zip(dims[:-1], dims[1:])):
            if w.shape != (i, o) or b.shape != (o,):
                raise ConfigError("parameter shape does not match layer_dims")
        if dims[0] != dims[-1] + 2 * self.time_freqs:
            raise ConfigError("input width must be ambient dim + 2 * time_freqs")
        self.layer_dims = dims

    @classmethod
    def create(cls, ambient_dim: int, hidden: list[int], activation: str = "tanh",
               time_freqs: int = DEFAULT_TIME_FREQS, seed: int = 0) -> "FieldNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        dims = [ambient_dim + 2 * time_freqs, *hidden, ambient_dim]
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for i, o in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(i)
            ws.append(rng.uniform(-bound, bound, (i, o)))
            bs.append(rng.uniform(-bound, bound, o))
        return cls(dims, ws, bs, activation, time_freqs)

    @classmethod
    def zeros(cls, ambient_dim: int, hidden: list[int], activation: str = "tanh",
              time_freqs: int = DEFAULT_TIME_FREQS) -> "FieldNet":
        dims = [ambient_dim + 2 * time_freqs, *hidden, ambient_dim]
        ws = [np.zeros((i, o)) for i, o in zip(dims[:-1], dims[1:])]
        bs = [np.zeros(o) for o in dims[1:]]
        return cls(dims, ws, bs, activation, time_freqs)

    @property
    def ambient_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "FieldNet":
        return copy.deepcopy(self)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for wb in zip(self.weights, self.biases) for p in wb])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise ConfigError("flat parameter vector has the wrong length")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size

    # -- network passes -----------------------------------------------------

    def _inputs(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.ambient_dim:
            raise ConfigError(f"expected points of dimension {self.ambient_dim}, got {x.shape[1]}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return x, np.concatenate([x, time_features(t, self.time_freqs)], axis=1)

    def _pass(self, t, x, dirs=None):
        """Primal pass, plus forward-mode tangents along ``dirs`` (m, B, d) in x.

        Returns ``(u, udot, cache)``; ``udot`` is None without directions.
        """
        act = ACTIVATIONS[self.activation]
        x, h = self._inputs(t, x)
        hdot = None
        if dirs is not None:
            dirs = np.asarray(dirs, dtype=np.float64)
            pad = np.zeros(dirs.shape[:2] + (2 * self.time_freqs,))
            hdot = np.concatenate([dirs, pad], axis=2)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w + b
            adot = None if hdot is None else hdot @ w
            if i == last:
                cache.append((h, hdot, None, None, None))
                return a, adot, cache
            s, d1, d2 = act(a)
            cache.append((h, hdot, d1, d2, adot))
            h = s
            hdot = None if adot is None else d1 * adot

    def _backprop(self, cache, g_u, g_udot=None):
        """Reverse sweep; returns the flat gradient for output adjoints."""
        grads = []
        g_a, g_adot = g_u, g_udot
        for i in range(len(self.weights) - 1, -1, -1):
            h, hdot, _, _, _ = cache[i]
            gw = h.T @ g_a
            if g_adot is not None:
                m, bsz, width = hdot.shape
                gw = gw + hdot.reshape(m * bsz, width).T @ g_adot.reshape(m * bsz, -1)
            grads.append((gw, g_a.sum(axis=0)))
            if i == 0:
                break
            w = self.weights[i]
            g_h = g_a @ w.T
            _, _, d1, d2, adot = cache[i - 1]
            if g_adot is not None:
                g_hdot = g_adot @ w.T
                g_a = d1 * g_h + np.sum(d2 * adot * g_hdot, axis=0)
                g_adot = d1 * g_hdot
            else:
                g_a = d1 * g_h
        grads.reverse()
        return np.concatenate([p.ravel() for wb in grads for p in wb])

    def ambient(self, t, x) -> np.ndarray:
        """Raw network output before tangent projection."""
        return self._pass(t, x)[0]

    def __call__(self, t, x) -> np.ndarray:
        return field_eval(self, t, x)

    def divergence(self, t, x) -> np.ndarray:
        return field_divergence(self, t, x)


def field_eval(net: FieldNet, t, x) -> np.ndarray:
    """Tangent field ``P_x u(t, x)`` at each point; shape ``(B, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return sphere_tangent_project(x, net.ambient(t, x))


def field_jvp(net: FieldNet, t, x, direction) -> np.ndarray:
    """Directional derivative of the projected field, ``D_e (P_x u)``.

    Uses the ambient extension ``P_y xi = xi - <xi, y> y``, so it is also the
    derivative a finite difference off the sphere measures.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    e = np.broadcast_to(np.asarray(direction, dtype=np.float64), x.shape)
    u, udot, _ = net._pass(t, x, e[None])
    udot = udot[0]
    return (
        sphere_tangent_project(x, udot)
        - np.sum(e * u, axis=1, keepdims=True) * x
        - np.sum(x * u, axis=1, keepdims=True) * e
    )


def _frame_dirs(x):
    basis = sphere_tangent_basis(x)  # (B, d, n)
    return np.moveaxis(basis, -1, 0)  # (n, B, d)


def field_divergence(net: FieldNet, t, x) -> np.ndarray:
    """Riemannian divergence of the projected field on S^n, exact per point."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dirs = _frame_dirs(x)
    u, udot, _ = net._pass(t, x, dirs)
    n = dirs.shape[0]
    return -n * np.sum(x * u, axis=1) + np.einsum("mbd,mbd->b", dirs, udot)


def _check_batch(net: FieldNet, batch: InterpolantBatch):
    if batch.manifold != SPHERE:
        raise ConfigError("field losses are defined on sphere routes (use the S^5 route for SO(3))")
    if len(batch) == 0:
        raise ConfigError("empty batch")
    if batch.xt.shape[1] != net.ambient_dim:
        raise ConfigError("batch dimension does not match the network output")


def velocity_loss(net: FieldNet, batch: InterpolantBatch, target=None):
    """Mean of ``1/2 |v(t, xt)|^2 - <dI/dt, v(t, xt)>`` and its parameter gradient.

    ``target`` replaces ``batch.dxt`` when given (regression on a known field).
    """
    _check_batch(net, batch)
    x = batch.xt
    dxt = batch.dxt if target is None else np.asarray(target, dtype=np.float64)
    u, _, cache = net._pass(batch.t, x)
    v = sphere_tangent_project(x, u)
    pd = sphere_tangent_project(x, dxt)
    bsz = x.shape[0]
    loss = np.mean(0.5 * np.sum(v * v, axis=1) - np.sum(pd * v, axis=1))
    g_u = (v - pd) / bsz
    return float(loss), net._backprop(cache, g_u)


def score_loss_ism(net: FieldNet, batch: InterpolantBatch):
    """Mean of ``1/2 |s(t, xt)|^2 + div s(t, xt)`` and its parameter gradient."""
    _check_batch(net, batch)
    x = batch.xt
    dirs = _frame_dirs(x)
    n = dirs.shape[0]
    u, udot, cache = net._pass(batch.t, x, dirs)
    s = sphere_tangent_project(x, u)
    xu = np.sum(x * u, axis=1)
    div = -n * xu + np.einsum("mbd,mbd->b", dirs, udot)
    bsz = x.shape[0]
    loss = np.mean(0.5 * np.sum(s * s, axis=1) + div)
    g_u = (s - n * x) / bsz
    g_udot = dirs / bsz
    return float(loss), net._backprop(cache, g_u, g_udot)


# ---------------------------------------------------------------------------
# Drifts
# ---------------------------------------------------------------------------


class ZeroField:
    def __call__(self, t, x):
        return np.zeros_like(np.atleast_2d(x), dtype=np.float64)

    def divergence(self, t, x):
        return np.zeros(np.atleast_2d(x).shape[0])


class LinearField:
    """``P_x(A x)``; skew ``A`` gives a Killing (rotation) field with zero divergence."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)

    def __call__(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return sphere_tangent_project(x, x @ self.a.T)

    def divergence(self, t, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        quad = np.einsum("bi,ij,bj->b", x, self.a, x)
        return np.trace(self.a) - x.shape[1] * quad


@dataclass
class PerturbedDrift:
    """``v + eps(t) s``.  With ``eps == 0`` the score net is never evaluated.

    ``schedule`` is an optional hook ``t -> eps(t)``; when absent the constant
    ``epsilon`` is used.
    """

    velocity: Callable
    score: Callable | None = None
    epsilon: float = 0.0
    schedule: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.epsilon > 0 and self.score is None and self.schedule is None:
            raise ConfigError("a positive epsilon needs a score field")

    def eps_at(self, t) -> float:
        return float(self.schedule(t)) if self.schedule is not None else self.epsilon

    def __call__(self, t, x):
        v = self.velocity(t, x)
        eps = self.eps_at(t)
        if eps == 0.0 or self.score is None:
            return v
        return v + eps * self.score(t, x)

    def divergence(self, t, x):
        div = self.velocity.divergence(t, x)
        eps = self.eps_at(t)
        if eps == 0.0 or self.score is None:
            return div
        return div + eps * self.score.divergence(t, x)

    def reversed(self) -> "ReversedDrift":
        return ReversedDrift(self)


class ReversedDrift:
    """Drift of the time-reversed process, ``-v_B(1-s, x) = -v + eps s`` at ``1-s``."""

    def __init__(self, drift: PerturbedDrift):
        self.drift = drift
        self.epsilon = drift.epsilon

    def eps_at(self, s):
        return self.drift.eps_at(1.0 - s)

    def __call__(self, s, x):
        t = 1.0 - np.asarray(s, dtype=np.float64)
        v = -self.drift.velocity(t, x)
        eps = self.drift.eps_at(t)
        if eps == 0.0 or self.drift.score is None:
            return v
        return v + eps * self.drift.score(t, x)

    def divergence(self, s, x):
        t = 1.0 - np.asarray(s, dtype=np.float64)
        div = -self.drift.velocity.divergence(t, x)
        eps = self.drift.eps_at(t)
        if eps == 0.0 or self.drift.score is None:
            return div
        return div + eps * self.drift.score.divergence(t, x)
