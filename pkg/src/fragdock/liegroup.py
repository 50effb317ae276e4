"""SO(3) / SE(3) primitives.

Rotations are plain 3x3 numpy arrays. Functions accept a single vector or
matrix, or a stack with arbitrary leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi

SMALL_ANGLE = 1e-6
PI_MARGIN = 1e-9
DRIFT_TOL = 1e-10


def hat(v):
    """Map R^3 -> so(3); ``hat(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(S):
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def exp_so3(v):
    """Rodrigues' formula, with a second-order series below ``SMALL_ANGLE``."""
    v = np.asarray(v, dtype=float)
    omega = np.linalg.norm(v, axis=-1)
    S = hat(v)
    S2 = S @ S
    small = omega < SMALL_ANGLE
    safe = np.where(small, 1.0, omega)
    a = np.where(small, 1.0 - omega**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - omega**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a[..., None, None] * S + b[..., None, None] * S2


def geodesic_angle(R):
    """Rotation angle in [0, pi] from ``tr(R) = 1 + 2 cos(angle)``."""
    R = np.asarray(R, dtype=float)
    c = (np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def log_so3(R):
    """Inverse of :func:`exp_so3` as a rotation vector.

    Raises AngleNearPi when ``tr(R) <= -1 + 1e-9``, where the axis is not
    determined by the skew part.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R, axis1=-2, axis2=-1)
    if np.any(tr <= -1.0 + PI_MARGIN):
        raise AngleNearPi("log map requested at the cut locus (angle ~ pi)")
    w = vee(R - np.swapaxes(R, -1, -2)) / 2.0  # sin(omega) * axis
    s = np.linalg.norm(w, axis=-1)
    omega = np.arctan2(s, (tr - 1.0) / 2.0)
    small = omega < SMALL_ANGLE
    safe = np.where(small, 1.0, s)
    factor = np.where(small, 1.0 + omega**2 / 6.0, omega / safe)
    return factor[..., None] * w


def project_to_so3(M):
    """Nearest rotation in Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, -1] *= d[..., None] if np.ndim(d) else d
    return U @ Vt


def orthonormality_error(R):
    R = np.asarray(R, dtype=float)
    return np.max(np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)))


def renormalize(R, tol=DRIFT_TOL):
    """Project back onto SO(3) only when drift exceeds ``tol``."""
    if orthonormality_error(R) > tol:
        return project_to_so3(R)
    return R


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (
        R.shape[-2:] == (3, 3)
        and orthonormality_error(R) < tol
        and np.all(np.abs(np.linalg.det(R) - 1.0) < tol)
    )


@dataclass(frozen=True)
class RigidTransform:
    """Element (p, R) of SE(3) acting as x -> p + R x."""

    p: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    def __matmul__(self, other):
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Group product (pa, Ra)(pb, Rb) = (pa + Ra pb, Ra Rb)."""
    return RigidTransform(a.p + a.R @ b.p, renormalize(a.R @ b.R))


def inverse(a: RigidTransform) -> RigidTransform:
    Rt = a.R.T
    return RigidTransform(-Rt @ a.p, Rt)


def apply(t: RigidTransform, points):
    points = np.asarray(points, dtype=float)
    return points @ t.R.T + t.p
