"""Newton-Euler prediction head, the score-model contract, an exact oracle and a toy model.

A score model is any callable ``model(z, t, fs, ctx) -> TangentScore``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import igso3
from .diffusion import TangentScore, conditional_score, forward_sample, loss_weights
from .errors import DimensionMismatch, Divergence, InputError, SingularInertia
from .fragment import fragment_points
from .liegroup import hat

PINV_RTOL = 1e-8


@dataclass(frozen=True)
class DockContext:
    """Pocket atoms in scaled units, the pocket centre (A) and the scale |M_b|."""

    pocket: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 2.7

    def __post_init__(self):
        pocket = np.asarray(self.pocket, dtype=float).reshape(-1, 3)
        if len(pocket) < 1:
            raise InputError("pocket needs at least one atom")
        if not self.scale > 0:
            raise InputError("scale must be positive")
        object.__setattr__(self, "pocket", pocket)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))

    def rotated(self, R0):
        """Pocket rotated about the scaled-frame origin."""
        return DockContext(self.pocket @ np.asarray(R0).T, self.center, self.scale)


# -- head -------------------------------------------------------------------

def inertia(r):
    """sum |r|^2 I - r r^T over rows of r."""
    r = np.asarray(r, dtype=float)
    return np.sum(r * r) * np.eye(3) - r.T @ r


def pinv_inertia(I, rtol=PINV_RTOL):
    """Pseudo-inverse zeroing singular values below ``rtol * max``; warns when any are dropped."""
    U, s, Vt = np.linalg.svd(I)
    keep = s > rtol * (s[0] if s[0] > 0 else 1.0)
    if not np.all(keep):
        warnings.warn("rank-deficient fragment inertia; pseudo-inverse used", SingularInertia,
                      stacklevel=3)
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (Vt.T * inv_s) @ U.T


def net_wrench(forces, coords, p):
    """Total force and torque about p."""
    forces = np.asarray(forces, dtype=float)
    r = np.asarray(coords, dtype=float) - p
    return forces.sum(axis=0), np.cross(r, forces).sum(axis=0)


def newton_euler_head(forces, coords, p, R, t, sched, table):
    """Fragment scores from per-atom forces.

    Returns (translational score, rotational coefficient v) where the
    rotational tangent at R is ``R @ hat(v)``. The head predicts the rotation
    vector w = I^-1 tau and maps it through the IGSO(3) score magnitude:
    tangent = -(c(w)/w) hat(w) R, i.e. v = -(c/w) R^T w.
    """
    forces = np.asarray(forces, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if forces.shape != coords.shape or forces.ndim != 2 or forces.shape[1] != 3:
        raise DimensionMismatch("forces and coords must both be (n, 3)")
    F, tau = net_wrench(forces, coords, p)
    w = pinv_inertia(inertia(coords - p)) @ tau
    s_p = F / (len(forces) * np.sqrt(1.0 - sched.alpha(t)))
    ratio = igso3.score_ratio(table, np.linalg.norm(w), sched.sigma(t))
    v = -ratio * (np.asarray(R).T @ w)
    return s_p, v


def head_rotation_matrix(v, R):
    """Tangent matrix R hat(v) (equal to -(c/w) hat(w) R for the head output)."""
    return np.asarray(R) @ hat(v)


# -- oracle -----------------------------------------------------------------

@dataclass(frozen=True)
class OracleScoreModel:
    """Exact conditional score towards a single known pose ``z0``."""

    z0: object
    sched: object
    table: object

    def __call__(self, z, t, fs=None, ctx=None):
        return conditional_score(self.sched, self.table, z, self.z0, t)


def oracle_score(z0, sched, table):
    return OracleScoreModel(z0, sched, table)


# -- toy model --------------------------------------------------------------

N_RBF = 16
RBF_MAX = 12.0
FREQS = np.array([0.5, 1.0, 2.0, 4.0]) * np.pi
N_TIME = 2 * len(FREQS)


def rbf(d):
    """Gaussian bumps on [0, 12] A, width equal to the centre spacing."""
    centers = np.linspace(0.0, RBF_MAX, N_RBF)
    width = centers[1] - centers[0]
    return np.exp(-0.5 * ((np.asarray(d)[..., None] - centers) / width) ** 2)


def time_features(t):
    t = float(t)
    return np.concatenate([np.sin(FREQS * t), np.cos(FREQS * t)])


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > 1e-12, v / np.where(n > 1e-12, n, 1.0), 0.0), n[..., 0]


def force_basis(points, p, pocket, scale, t):
    """Per-atom force for each parameter: array (P, n, 3), P = 2 * 16 * 8.

    Pocket term: sum_j phi_k(|x_i - y_j|) unit(x_i - y_j) * psi_q(t).
    Centroid term: phi_k(|x_i - p|) unit(x_i - p) * psi_q(t).
    Distances are converted to A with ``scale`` before the radial basis.
    """
    psi = time_features(t)
    u, d = _unit(points[:, None, :] - pocket[None, :, :])
    a = np.einsum("ijk,ijc->kic", rbf(d * scale), u)
    uc, dc = _unit(points - p)
    b = np.einsum("ik,ic->kic", rbf(dc * scale), uc)
    n = len(points)
    pa = (a[:, None] * psi[None, :, None, None]).reshape(-1, n, 3)
    pb = (b[:, None] * psi[None, :, None, None]).reshape(-1, n, 3)
    return np.concatenate([pa, pb], axis=0)


N_PARAMS = 2 * N_RBF * N_TIME


@dataclass(frozen=True)
class ToyScoreModel:
    """Linear radial-basis force field routed through the Newton-Euler head."""

    theta: np.ndarray
    sched: object
    table: object

    def forces(self, z, t, fs, ctx):
        out = []
        for pts, p in zip(fragment_points(z, fs), z.p):
            out.append(np.einsum("a,aic->ic", self.theta, force_basis(pts, p, ctx.pocket, ctx.scale, t)))
        return out

    def __call__(self, z, t, fs, ctx):
        trans, rot = [], []
        for f, pts, p, R in zip(self.forces(z, t, fs, ctx), fragment_points(z, fs), z.p, z.R):
            s_p, v = newton_euler_head(f, pts, p, R, t, self.sched, self.table)
            trans.append(s_p)
            rot.append(v)
        return TangentScore(np.array(trans), np.array(rot))

    def to_json(self):
        return {
            "schema_version": 1,
            "kind": "toy_model",
            "theta": self.theta.tolist(),
            "features": {"n_rbf": N_RBF, "rbf_max_A": RBF_MAX, "time_freqs": FREQS.tolist(),
                         "terms": ["pocket", "centroid"]},
            "schedule": self.sched.as_dict(),
        }

    @classmethod
    def from_json(cls, doc, sched, table):
        if doc.get("kind") != "toy_model":
            raise InputError("not a toy model document")
        feats = doc.get("features", {})
        if feats.get("n_rbf") != N_RBF or feats.get("time_freqs") != FREQS.tolist():
            raise InputError("toy model feature spec does not match this version")
        theta = np.asarray(doc["theta"], dtype=float)
        if theta.shape != (N_PARAMS,):
            raise InputError("toy model has the wrong number of weights")
        return cls(theta, sched, table)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


@dataclass
class TrainingPool:
    """Precomputed linear maps from parameters to head inputs, one row per (sample, fragment)."""

    Fb: np.ndarray  # (Q, P, 3) translational score per parameter
    Wb: np.ndarray  # (Q, P, 3) rotation vector w per parameter
    R: np.ndarray  # (Q, 3, 3)
    sigma: np.ndarray  # (Q,)
    lam_p: np.ndarray
    lam_r: np.ndarray
    target_p: np.ndarray  # (Q, 3)
    target_r: np.ndarray  # (Q, 3)
    n_samples: int


def build_pool(dataset, sched, table, rng, n_samples=16, t_min=0.05, t_max=1.0):
    """Noised copies of each datum, frozen so full-batch training is deterministic."""
    rows = {k: [] for k in ("Fb", "Wb", "R", "sigma", "lam_p", "lam_r", "target_p", "target_r")}
    total = 0
    for fs, ctx, z0 in dataset:
        for _ in range(n_samples):
            t = float(rng.uniform(t_min, t_max))
            zt = forward_sample(sched, table, z0, t, rng)
            cond = conditional_score(sched, table, zt, z0, t)
            lam_p, lam_r = loss_weights(sched, table, t)
            total += 1
            for i, pts in enumerate(fragment_points(zt, fs)):
                p = zt.p[i]
                B = force_basis(pts, p, ctx.pocket, ctx.scale, t)
                r = pts - p
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SingularInertia)
                    Iinv = pinv_inertia(inertia(r))
                tau = np.cross(r[None], B).sum(axis=1)
                rows["Fb"].append(B.sum(axis=1) / (len(pts) * np.sqrt(1 - sched.alpha(t))))
                rows["Wb"].append(tau @ Iinv.T)
                rows["R"].append(zt.R[i])
                rows["sigma"].append(sched.sigma(t))
                rows["lam_p"].append(lam_p)
                rows["lam_r"].append(lam_r)
                rows["target_p"].append(cond.trans[i])
                rows["target_r"].append(cond.rot[i])
    arrays = {k: np.array(v, dtype=float) for k, v in rows.items()}
    return TrainingPool(n_samples=total, **arrays)


def pool_loss(theta, pool, table, grad=True):
    """Mean weighted score-matching loss over the pool and its exact gradient."""
    sp = np.einsum("p,qpc->qc", theta, pool.Fb)
    w = np.einsum("p,qpc->qc", theta, pool.Wb)
    omega = np.linalg.norm(w, axis=1)
    ratio = igso3.score_ratio(table, omega, pool.sigma)
    v = -ratio[:, None] * np.einsum("qji,qj->qi", pool.R, w)
    ep = sp - pool.target_p
    er = v - pool.target_r
    loss = (np.sum(pool.lam_p * np.sum(ep**2, 1)) + np.sum(pool.lam_r * np.sum(er**2, 1))) / pool.n_samples
    if not grad:
        return loss
    g = 2 * np.einsum("q,qpc,qc->p", pool.lam_p, pool.Fb, ep)
    slope = igso3.score_ratio_slope(table, omega, pool.sigma)
    what = w / np.where(omega > 0, omega, 1.0)[:, None]
    # d w / d theta = Wb ; d v = -R^T (ratio dw + slope (w_hat . dw) w)
    dw_dir = np.einsum("qpc,qc->qp", pool.Wb, what)
    inner = ratio[:, None, None] * pool.Wb + slope[:, None, None] * dw_dir[:, :, None] * w[:, None, :]
    J = -np.einsum("qpj,qji->qpi", inner, pool.R)
    g += 2 * np.einsum("q,qpi,qi->p", pool.lam_r, J, er)
    return loss, g / pool.n_samples


def toy_model_train(dataset, sched, table, steps=2000, lr=1e-2, rng=None, n_samples=16,
                    theta0=None, optimizer="adam", callback=None):
    """Fit the toy model by full-batch descent on a frozen pool of noised samples.

    Adam (or plain gradient descent with ``optimizer="sgd"``) proposes each
    step; a proposal that raises the loss is rejected and the step size
    halved, so the recorded loss never increases. Returns (model, loss
    history). Raises Divergence if the loss exceeds ten times its initial value.
    """
    if not dataset:
        raise InputError("empty training set")
    if optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    pool = build_pool(dataset, sched, table, rng, n_samples=n_samples)
    theta = np.zeros(N_PARAMS) if theta0 is None else np.array(theta0, dtype=float)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    b1, b2, eps = 0.9, 0.999, 1e-12
    with np.errstate(invalid="ignore"):
        loss, g = pool_loss(theta, pool, table)
    if not np.isfinite(loss):
        raise Divergence("initial training loss is not finite")
    initial = loss
    history = [loss]
    step_size = lr
    for step in range(1, steps + 1):
        if optimizer == "adam":
            m1 = b1 * m1 + (1 - b1) * g
            m2 = b2 * m2 + (1 - b2) * g * g
            direction = (m1 / (1 - b1**step)) / (np.sqrt(m2 / (1 - b2**step)) + eps)
        else:
            direction = g
        cand = theta - step_size * direction
        c_loss, c_g = pool_loss(cand, pool, table)
        if not np.isfinite(c_loss) or c_loss > 10 * initial:
            if step_size < 1e-12 * lr:
                raise Divergence(f"training loss {c_loss:.3g} exceeded 10x initial {initial:.3g}")
            step_size *= 0.5
        elif c_loss <= loss:
            theta, loss, g = cand, c_loss, c_g
            step_size = min(step_size * 1.1, lr)
        else:
            step_size *= 0.5
        history.append(loss)
        if callback is not None:
            callback(step, loss)
    return ToyScoreModel(theta, sched, table), np.array(history)


def zero_model(sched, table):
    return ToyScoreModel(np.zeros(N_PARAMS), sched, table)
