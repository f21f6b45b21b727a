"""Exact geometry kernels for the hypersphere S^n and the rotation group SO(3).

All kernels are vectorised over leading axes: sphere points are arrays of
shape ``(..., n+1)``, rotations are ``(..., 3, 3)``, axis-angle vectors are
``(..., 3)`` and 6D embeddings are ``(..., 6)``.  The small value-object types
at the bottom of the module wrap a single element and validate invariants at
construction; the kernels themselves never allocate them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CutLocusError, DegenerateEmbeddingError, RetractionError

SPHERE = "sphere"
SO3 = "so3"

# Sphere inner-product guard and SO(3) trace guard.  Asymmetric on purpose:
# arccos near -1 loses half the significant digits.
SPHERE_CUT_TOL = 1e-9
SO3_TRACE_TOL = 1e-7
SMALL_ANGLE = 1e-7
ZERO_TANGENT = 1e-14

# Frobenius norm of hat(w) is sqrt(2)*|w|.  Tangent vectors on SO(3) are
# ambient 3x3 matrices measured in Frobenius norm everywhere in the library;
# this is the single conversion constant to the axis-angle norm.
SO3_FROBENIUS_SCALE = np.sqrt(2.0)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.linalg.norm(v, axis=-1)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


# ---------------------------------------------------------------------------
# Hypersphere
# ---------------------------------------------------------------------------


def sphere_exp(p, v):
    """Exponential map on S^n: ``cos|v| p + sin|v| v/|v|``.

    Returns ``p`` unchanged where ``|v| <= 1e-14``.  Raises CutLocusError when
    any tangent vector reaches the antipode (``|v| >= pi - 1e-9``).
    """
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    theta = _norm(v)
    if np.any(theta >= np.pi - SPHERE_CUT_TOL):
        raise CutLocusError(f"tangent norm {np.max(theta):.12g} reaches the cut locus")
    tiny = theta <= ZERO_TANGENT
    safe = np.where(tiny, 1.0, theta)
    out = np.cos(theta)[..., None] * p + (np.sin(theta) / safe)[..., None] * v
    out = out / _norm(out)[..., None]
    return np.where(tiny[..., None], p, out)


def sphere_dist(p, q):
    """Great-circle distance, evaluated with atan2 for accuracy at 0 and pi."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    c = _dot(p, q)
    w = q - c[..., None] * p
    return np.arctan2(_norm(w), c)


def sphere_log(p, q):
    """Logarithm map on S^n.

    ``arccos<p,q> / |q - <p,q>p| * (q - <p,q>p)``; the angle is taken from
    atan2 of the orthogonal and parallel components, which agrees with the
    arccos form but keeps full precision for nearly equal points.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    c = _dot(p, q)
    if np.any(c <= -1.0 + SPHERE_CUT_TOL):
        raise CutLocusError("logarithm requested at an antipodal pair")
    w = q - c[..., None] * p
    wn = _norm(w)
    theta = np.arctan2(wn, c)
    zero = wn == 0.0
    scale = np.where(zero, 0.0, theta / np.where(zero, 1.0, wn))
    return scale[..., None] * w


def sphere_tangent_project(p, xi):
    """Orthogonal projection onto T_p S^n: ``xi - <xi,p> p``."""
    p = np.asarray(p, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    return xi - _dot(xi, p)[..., None] * p


def sphere_projection_matrix(p):
    """Matrix form ``P_ij = delta_ij - p_i p_j`` of the tangent projection."""
    p = np.asarray(p, dtype=np.float64)
    d = p.shape[-1]
    return np.eye(d) - p[..., :, None] * p[..., None, :]


def sphere_tangent_basis(p):
    """Orthonormal basis of T_p S^n, shape ``(..., n+1, n)`` (basis in columns).

    Gram-Schmidt of ``[p, e_i1, ..., e_in]`` where the e_i are the canonical
    axes least aligned with p, so the factorisation never degenerates.
    """
    p = np.asarray(p, dtype=np.float64)
    d = p.shape[-1]
    order = np.argsort(np.abs(p), axis=-1)[..., : d - 1]
    axes = np.zeros(p.shape[:-1] + (d, d - 1))
    np.put_along_axis(axes, order[..., None, :], 1.0, axis=-2)
    stack = np.concatenate([p[..., :, None], axes], axis=-1)
    q, _ = np.linalg.qr(stack)
    return q[..., :, 1:]


# ---------------------------------------------------------------------------
# SO(3)
# ---------------------------------------------------------------------------


def hat(w):
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m):
    """Axis vector of the skew part of a 3x3 matrix."""
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def so3_exp(w):
    """Rodrigues' formula ``I + sin(t)K + (1-cos(t))K^2`` with ``K = hat(w/|w|)``.

    Written with the coefficients ``sin(t)/t`` and ``(1-cos(t))/t^2`` on
    ``hat(w)`` so the small-angle branch is a plain Taylor substitution.
    """
    w = np.asarray(w, dtype=np.float64)
    theta = _norm(w)
    small = theta <= SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(t)) / (t * t))
    k = hat(w)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def so3_angle(r):
    """Rotation angle in [0, pi] (atan2 of the skew and trace parts)."""
    r = np.asarray(r, dtype=np.float64)
    c = 0.5 * (np.trace(r, axis1=-2, axis2=-1) - 1.0)
    s = _norm(vee(r))
    return np.arctan2(s, c)


def so3_dist(p, q):
    """Geodesic angle between rotations, ``angle(p^T q)``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return so3_angle(np.swapaxes(p, -1, -2) @ q)


def so3_log(r):
    """Axis-angle logarithm ``gamma / (2 sin gamma) * vee-difference``.

    Raises CutLocusError when ``tr(R) <= -1 + 1e-7`` (rotation by ~pi).
    """
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r, axis1=-2, axis2=-1)
    if np.any(tr <= -1.0 + SO3_TRACE_TOL):
        raise CutLocusError("logarithm requested at a rotation by pi (trace -1)")
    axis = vee(r)  # = sin(gamma) * unit axis
    s = _norm(axis)
    c = np.clip(0.5 * (tr - 1.0), -1.0, 1.0)
    gamma = np.arctan2(s, c)
    small = gamma <= SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    factor = np.where(small, 1.0 + gamma * gamma / 6.0, gamma / safe_s)
    return factor[..., None] * axis


def so3_exp_at(p, v):
    """``p Exp_e(p^T v)`` for an ambient tangent matrix ``v`` at ``p``."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return p @ so3_exp(vee(np.swapaxes(p, -1, -2) @ v))


def so3_log_at(p, q):
    """``p hat(Log_e(p^T q))``, an ambient tangent matrix at ``p``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return p @ hat(so3_log(np.swapaxes(p, -1, -2) @ q))


def quaternion_to_rotation(q):
    """Unit quaternion ``(w, x, y, z)`` to a rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - z * w)
    out[..., 0, 2] = 2 * (x * z + y * w)
    out[..., 1, 0] = 2 * (x * y + z * w)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - x * w)
    out[..., 2, 0] = 2 * (x * z - y * w)
    out[..., 2, 1] = 2 * (y * z + x * w)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


# ---------------------------------------------------------------------------
# Truncation / Gram-Schmidt embedding of SO(3) into R^6
# ---------------------------------------------------------------------------

PARALLEL_TOL = 1e-8


def embed6_truncate(r):
    """Stack the first two columns of ``R`` into a 6-vector."""
    r = np.asarray(r, dtype=np.float64)
    return np.concatenate([r[..., :, 0], r[..., :, 1]], axis=-1)


def embed6_orthonormalize(l):
    """Gram-Schmidt on ``(l1, l2)``, third column ``r1 x r2``."""
    l = np.asarray(l, dtype=np.float64)
    l1, l2 = l[..., :3], l[..., 3:]
    n1 = _norm(l1)
    n2 = _norm(l2)
    if np.any(n1 <= 1e-300) or np.any(n2 <= 1e-300):
        raise DegenerateEmbeddingError("zero column in 6D embedding")
    r1 = l1 / n1[..., None]
    u = l2 - _dot(r1, l2)[..., None] * r1
    nu = _norm(u)
    # nu/n2 is sin of the angle between l1 and l2.
    if np.any(nu <= np.sin(PARALLEL_TOL) * n2):
        raise DegenerateEmbeddingError("parallel columns in 6D embedding")
    r2 = u / nu[..., None]
    r3 = np.cross(r1, r2)
    return np.stack([r1, r2, r3], axis=-1)


def retract(manifold: str, x):
    """Map a nearby ambient point back onto the manifold."""
    x = np.asarray(x, dtype=np.float64)
    if manifold == SPHERE:
        n = _norm(x)
        if np.any(n < 1e-8):
            raise RetractionError("cannot normalise a near-zero ambient vector")
        return x / n[..., None]
    if manifold == SO3:
        try:
            return embed6_orthonormalize(embed6_truncate(x))
        except DegenerateEmbeddingError as exc:
            raise RetractionError(str(exc)) from exc
    raise RetractionError(f"unknown manifold tag {manifold!r}")


# ---------------------------------------------------------------------------
# Validated single-element types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpherePoint:
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64)
        if c.ndim != 1 or c.size < 2:
            raise ValueError("sphere point needs a 1-d coordinate vector")
        if abs(np.linalg.norm(c) - 1.0) > 1e-12:
            raise ValueError(f"not a unit vector (norm {np.linalg.norm(c)!r})")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def normalized(cls, x):
        return cls(retract(SPHERE, x))


@dataclass(frozen=True)
class Rotation:
    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.linalg.norm(m.T @ m - np.eye(3)) > 1e-10:
            raise ValueError("matrix is not orthogonal")
        if abs(np.linalg.det(m) - 1.0) > 1e-10:
            raise ValueError("determinant is not +1")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)


@dataclass(frozen=True)
class AxisAngle:
    omega: np.ndarray

    def __post_init__(self):
        w = np.array(self.omega, dtype=np.float64)
        if w.shape != (3,):
            raise ValueError("axis-angle must be a 3-vector")
        if np.linalg.norm(w) >= np.pi:
            raise CutLocusError("rotation angle must be below pi")
        w.setflags(write=False)
        object.__setattr__(self, "omega", w)

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.omega))


@dataclass(frozen=True)
class Embedded6:
    vec: np.ndarray

    def __post_init__(self):
        v = np.array(self.vec, dtype=np.float64)
        if v.shape != (6,):
            raise ValueError("6D embedding must have six entries")
        v.setflags(write=False)
        object.__setattr__(self, "vec", v)

    @classmethod
    def of(cls, rot: Rotation) -> "Embedded6":
        return cls(embed6_truncate(rot.mat))

    def to_rotation(self) -> Rotation:
        return Rotation(embed6_orthonormalize(self.vec))


@dataclass(frozen=True)
class TangentVector:
    """Ambient representation of a tangent vector at ``base``.

    ``base`` is a SpherePoint or a Rotation; on SO(3) ``vec`` is a 3x3 matrix
    with ``base^T vec`` skew-symmetric.
    """

    base: SpherePoint | Rotation
    vec: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.vec, dtype=np.float64)
        if isinstance(self.base, SpherePoint):
            if v.shape != self.base.coords.shape:
                raise ValueError("tangent vector has the wrong dimension")
            if abs(float(v @ self.base.coords)) > 1e-10:
                raise ValueError("vector is not tangent to the sphere at base")
        elif isinstance(self.base, Rotation):
            if v.shape != (3, 3):
                raise ValueError("SO(3) tangent vectors are 3x3 matrices")
            s = self.base.mat.T @ v
            if np.max(np.abs(s + s.T)) > 1e-10:
                raise ValueError("base^T vec is not skew-symmetric")
        else:
            raise TypeError("base must be a SpherePoint or Rotation")
        v.setflags(write=False)
        object.__setattr__(self, "vec", v)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))


# ---------------------------------------------------------------------------
# SO(3) <-> S^5 route
# ---------------------------------------------------------------------------
# P(R) has norm sqrt(2) (two unit columns); dividing by sqrt(2) puts the image
# on the unit sphere S^5.  Gram-Schmidt is scale invariant, so the inverse is
# embed6_orthonormalize unchanged.


def so3_to_s5(r):
    return embed6_truncate(r) / SO3_FROBENIUS_SCALE


def s5_to_so3(l):
    return embed6_orthonormalize(l)
