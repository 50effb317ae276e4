"""Forward diffusion on SE(3)^m: schedules, kernels, conditional scores, loss.

Translations follow a variance-preserving SDE; rotations follow Brownian
motion on SO(3) whose marginal is IGSO(3) with scale sigma(t). Rotational
scores are stored as left-trivialised coefficients v, i.e. the tangent
vector at R is ``R @ hat(v)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import igso3
from .errors import DimensionMismatch
from .fragment import PoseState
from .liegroup import hat, log_so3


@dataclass(frozen=True)
class DiffusionSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    sigma_min: float = 0.01
    sigma_max: float = 2.5

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")

    def beta(self, t):
        return self.beta_min + np.asarray(t, dtype=float) * (self.beta_max - self.beta_min)

    def alpha(self, t):
        """exp(-1/2 int_0^t beta)."""
        t = np.asarray(t, dtype=float)
        return np.exp(-0.5 * (self.beta_min * t + 0.5 * t**2 * (self.beta_max - self.beta_min)))

    def _mix(self, t):
        t = np.asarray(t, dtype=float)
        return t * np.exp(self.sigma_max) + (1 - t) * np.exp(self.sigma_min)

    def sigma(self, t):
        return np.log(self._mix(t))

    def sigma_dot(self, t):
        return (np.exp(self.sigma_max) - np.exp(self.sigma_min)) / self._mix(t)

    def g(self, t):
        """d sigma^2 / dt, the rotational diffusion rate."""
        return 2 * self.sigma(t) * self.sigma_dot(t)

    def as_dict(self):
        return asdict(self)


def alpha_t(sched, t):
    return sched.alpha(t)


def sigma_t(sched, t):
    return sched.sigma(t)


@dataclass(frozen=True)
class TangentScore:
    """Per-fragment translational scores (m, 3) and rotational coefficients (m, 3)."""

    trans: np.ndarray
    rot: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.trans, dtype=float).reshape(-1, 3)
        rot = np.asarray(self.rot, dtype=float).reshape(-1, 3)
        if len(tr) != len(rot):
            raise DimensionMismatch("translation and rotation parts differ in length")
        object.__setattr__(self, "trans", tr)
        object.__setattr__(self, "rot", rot)

    @property
    def m(self):
        return len(self.trans)

    def rot_matrices(self, R):
        """Tangent vectors R_i hat(v_i) at the given rotations."""
        return np.asarray(R) @ hat(self.rot)

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros((m, 3)), np.zeros((m, 3)))


def so3_inner(S1, S2):
    """Canonical metric 1/2 tr(S1 S2^T)."""
    return 0.5 * np.einsum("...ij,...ij->...", S1, S2)


def forward_sample(sched, table, z0, t, rng):
    """Draw z_t given z_0, independently per fragment."""
    a = sched.alpha(t)
    p = a * z0.p + np.sqrt(1 - a**2) * rng.standard_normal(z0.p.shape)
    R = igso3.sample_igso3(table, z0.R, sched.sigma(t), rng, size=z0.m)
    return PoseState(p, R)


def conditional_score(sched, table, zt, z0, t):
    """Exact score of the forward kernel p_t(z_t | z_0)."""
    if zt.m != z0.m:
        raise DimensionMismatch("pose lengths differ")
    a = sched.alpha(t)
    trans = -(zt.p - a * z0.p) / (1 - a**2)
    w = log_so3(np.swapaxes(z0.R, -1, -2) @ zt.R)
    omega = np.linalg.norm(w, axis=-1)
    rot = w * igso3.score_ratio(table, omega, sched.sigma(t))[..., None]
    return TangentScore(trans, rot)


def loss_weights(sched, table, t, c_p=1.0, c_r=1.0):
    """(lambda_p, lambda_R) at time t."""
    return (igso3.loss_weight_translation(sched.alpha(t), c_p),
            igso3.loss_weight_rotation(table, sched.sigma(t), c_r))


def score_matching_loss(model_score, cond_score, t, sched, table, c_p=1.0, c_r=1.0):
    """lambda_p sum |dp|^2 + lambda_R sum |dR|^2 with the 1/2 tr metric on so(3)."""
    if model_score.m != cond_score.m:
        raise DimensionMismatch("score lengths differ")
    lam_p, lam_r = loss_weights(sched, table, t, c_p, c_r)
    dp = model_score.trans - cond_score.trans
    dv = model_score.rot - cond_score.rot
    # |R hat(v)|^2 under 1/2 tr(S S^T) equals |v|^2
    return float(lam_p * np.sum(dp**2) + lam_r * np.sum(dv**2))
