"""Geodesic interpolants ``I(t; x0, x1) = Exp_x0(t Log_x0 x1)`` and their time
derivatives on S^n and SO(3).

Couplings are always independent.  Pairs on the cut locus of each other are
dropped by :func:`filter_cut_locus`; the training loop re-pairs the affected
targets with fresh prior draws rather than projecting them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .manifold import (
    SO3,
    SO3_TRACE_TOL,
    SPHERE,
    SPHERE_CUT_TOL,
    hat,
    so3_exp,
    so3_log,
    sphere_log,
)


def interp_sphere(t, x0, x1):
    """Great-circle interpolant and its velocity.

    Returns ``(xt, dxt, log01)`` with ``dxt = cos(t|L|) L - |L| sin(t|L|) x0``.
    """
    t = np.asarray(t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    log01 = sphere_log(x0, x1)
    theta = np.linalg.norm(log01, axis=-1)
    safe = np.where(theta == 0.0, 1.0, theta)
    unit = log01 / safe[..., None]
    c = np.cos(t * theta)[..., None]
    s = np.sin(t * theta)[..., None]
    xt = c * x0 + s * unit
    dxt = c * log01 - theta[..., None] * s * x0
    return xt, dxt, log01


def interp_so3(t, x0, x1):
    """One-parameter-subgroup interpolant ``x0 Exp(t w)``, ``w = Log(x0^T x1)``.

    The velocity is the ambient matrix ``xt hat(w)``; its Frobenius norm is
    ``sqrt(2)|w|``.  Returns ``(xt, dxt, log01)`` with ``log01 = x0 hat(w)``.
    """
    t = np.asarray(t, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    w = so3_log(np.swapaxes(x0, -1, -2) @ x1)
    xt = x0 @ so3_exp(t[..., None] * w)
    k = hat(w)
    return xt, xt @ k, x0 @ k


def cut_locus_mask(manifold: str, x0, x1) -> np.ndarray:
    """Boolean mask of pairs that admit a unique minimising geodesic."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if manifold == SPHERE:
        return np.sum(x0 * x1, axis=-1) > -1.0 + SPHERE_CUT_TOL
    if manifold == SO3:
        tr = np.einsum("...ji,...ji->...", x0, x1)  # tr(x0^T x1)
        return tr > -1.0 + SO3_TRACE_TOL
    raise ConfigError(f"unknown manifold tag {manifold!r}")


def filter_cut_locus(manifold: str, x0, x1):
    """Drop pairs on each other's cut locus. Returns ``(x0_kept, x1_kept, rejected)``."""
    keep = cut_locus_mask(manifold, x0, x1)
    return np.asarray(x0)[keep], np.asarray(x1)[keep], int(keep.size - keep.sum())


@dataclass
class InterpolantBatch:
    manifold: str
    t: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    log01: np.ndarray
    xt: np.ndarray
    dxt: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]


def build_batch(manifold: str, t, x0, x1) -> InterpolantBatch:
    t = np.asarray(t, dtype=np.float64)
    if manifold == SPHERE:
        xt, dxt, log01 = interp_sphere(t, x0, x1)
    elif manifold == SO3:
        xt, dxt, log01 = interp_so3(t, x0, x1)
    else:
        raise ConfigError(f"unknown manifold tag {manifold!r}")
    return InterpolantBatch(manifold, t, np.asarray(x0), np.asarray(x1), log01, xt, dxt)
