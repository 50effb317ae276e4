"""Numerical audits: Gram matrices of torsional vs fragment parametrisations,
pose sanity checks, a declared pseudo-energy and mixed-score ranking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .align import rotate_torsion
from .fragment import PoseState, fragment_points
from .liegroup import exp_so3

FD_STEP = 1e-5

BOND_REL_TOL = 0.25
ANGLE_TOL_DEG = 25.0
CLASH_INTRA = 1.7
CLASH_POCKET = 1.5


@dataclass
class GramReport:
    label: str
    gram: np.ndarray
    offdiag_max: float  # largest |entry| coupling different parameter blocks
    blocks: dict = field(default_factory=dict)

    def summary(self):
        out = {"label": self.label, "size": int(len(self.gram)), "offdiag_max": self.offdiag_max}
        out.update({k: v for k, v in self.blocks.items() if np.isscalar(v)})
        return out


def _torsion_positions(x0, specs, u):
    x = np.array(x0, dtype=float)
    for spec, a in zip(specs, u):
        if a:
            x = rotate_torsion(x, spec, a)
    return x


def torsional_gram(g, conformer, specs, u=None, h=FD_STEP):
    """Gram matrix over k torsion columns plus 3 translations and 3 rotations about the centroid.

    Columns are central differences (step ``h``) of the flattened coordinates.
    """
    k = len(specs)
    u = np.zeros(k) if u is None else np.asarray(u, dtype=float)
    x = _torsion_positions(conformer, specs, u)
    c = x.mean(axis=0)
    cols = []
    for i, spec in enumerate(specs):
        cols.append((rotate_torsion(x, spec, h) - rotate_torsion(x, spec, -h)).ravel() / (2 * h))
    for e in np.eye(3):
        cols.append(((x + h * e) - (x - h * e)).ravel() / (2 * h))
    for e in np.eye(3):
        plus = (x - c) @ exp_so3(h * e).T + c
        minus = (x - c) @ exp_so3(-h * e).T + c
        cols.append((plus - minus).ravel() / (2 * h))
    J = np.array(cols).T
    G = J.T @ J
    tt = G[:k, :k]
    off_tt = tt - np.diag(np.diag(tt))
    blocks = {
        "torsion_torsion": tt,
        "torsion_translation": G[:k, k:k + 3],
        "torsion_rotation": G[:k, k + 3:],
        "torsion_torsion_max": float(np.abs(off_tt).max()) if k > 1 else 0.0,
        "torsion_translation_max": float(np.abs(G[:k, k:k + 3]).max()) if k else 0.0,
        "torsion_rotation_max": float(np.abs(G[:k, k + 3:]).max()) if k else 0.0,
    }
    return GramReport("torsional", G, blocks["torsion_torsion_max"], blocks)


def _perturb(z, i, j, delta):
    """Pose with fragment i's parameter j shifted: j < 3 translation, else right rotation."""
    p, R = z.p.copy(), z.R.copy()
    if j < 3:
        p[i, j] += delta
    else:
        R[i] = R[i] @ exp_so3(delta * np.eye(3)[j - 3])
    return PoseState(p, R)


def fragment_gram(fs, z, h=FD_STEP):
    """Gram matrix of the map from 6m fragment parameters to all rigid points.

    Rows cover every fragment's real atoms and free dummies, so each block is
    full rank even for one-atom fragments.
    """
    m = fs.m
    cols = []
    for i in range(m):
        for j in range(6):
            plus = np.concatenate(fragment_points(_perturb(z, i, j, h), fs))
            minus = np.concatenate(fragment_points(_perturb(z, i, j, -h), fs))
            cols.append((plus - minus).ravel() / (2 * h))
    J = np.array(cols).T
    G = J.T @ J
    cross = 0.0
    dets = []
    for i in range(m):
        dets.append(np.linalg.det(G[6 * i:6 * i + 6, 6 * i:6 * i + 6]))
        for j in range(m):
            if i != j:
                cross = max(cross, float(np.abs(G[6 * i:6 * i + 6, 6 * j:6 * j + 6]).max()))
    det_full = np.linalg.det(G)
    det_prod = float(np.prod(dets))
    blocks = {
        "cross_block_max": cross,
        "det": float(det_full),
        "det_product": det_prod,
        "det_rel_err": float(abs(det_full - det_prod) / abs(det_prod)) if det_prod else float("nan"),
    }
    return GramReport("fragment", G, cross, blocks)


# -- pose checks ------------------------------------------------------------

def _angles(g, x):
    out = {}
    for j in range(g.n_atoms):
        nb = sorted(g.neighbors(j))
        for a in range(len(nb)):
            for b in range(a + 1, len(nb)):
                u, v = x[nb[a]] - x[j], x[nb[b]] - x[j]
                cosv = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
                out[(nb[a], j, nb[b])] = np.degrees(np.arccos(np.clip(cosv, -1, 1)))
    return out


def pose_checks(coords, g, reference, pocket=None):
    """Fraction of passed checks and the individual results.

    bond_lengths: every bond within 25% of the reference length.
    bond_angles: every bond angle within 25 degrees of the reference.
    internal_clash: no non-bonded ligand pair closer than 1.7 A.
    pocket_clash: no ligand-pocket pair closer than 1.5 A.
    """
    x = np.asarray(coords, dtype=float)
    ref = np.asarray(reference, dtype=float)
    ok_len = all(
        abs(np.linalg.norm(x[a] - x[b]) - np.linalg.norm(ref[a] - ref[b]))
        <= BOND_REL_TOL * np.linalg.norm(ref[a] - ref[b])
        for a, b, _ in g.bonds
    )
    ang_x, ang_r = _angles(g, x), _angles(g, ref)
    ok_ang = all(abs(ang_x[key] - ang_r[key]) <= ANGLE_TOL_DEG for key in ang_x)
    bonded = {(a, b) for a, b, _ in g.bonds}
    d = np.linalg.norm(x[:, None] - x[None], axis=-1)
    ok_clash = all(
        d[i, j] >= CLASH_INTRA
        for i in range(g.n_atoms) for j in range(i + 1, g.n_atoms) if (i, j) not in bonded
    )
    if pocket is None or len(pocket) == 0:
        ok_pocket = True
    else:
        dp = np.linalg.norm(x[:, None] - np.asarray(pocket, dtype=float)[None], axis=-1)
        ok_pocket = bool(dp.min() >= CLASH_POCKET)
    checks = {"bond_lengths": ok_len, "bond_angles": ok_ang, "internal_clash": ok_clash,
              "pocket_clash": ok_pocket}
    return sum(checks.values()) / len(checks), checks


def pseudo_energy(coords, pocket, cutoff=8.0):
    """Sum over ligand-pocket pairs within ``cutoff``: 10 (1.5 - d)^2 below 1.5 A,
    -exp(-(d - 3.5)^2 / 2) from 1.5 A up to the cutoff. Lower is better."""
    d = np.linalg.norm(np.asarray(coords, dtype=float)[:, None] - np.asarray(pocket, dtype=float)[None], axis=-1)
    d = d[d <= cutoff]
    clash = d < CLASH_POCKET
    return float(np.sum(10.0 * (CLASH_POCKET - d[clash]) ** 2) - np.sum(np.exp(-0.5 * (d[~clash] - 3.5) ** 2)))


# -- ranking ----------------------------------------------------------------

@dataclass
class RankedSample:
    coords: object
    energy: float  # b, lower is better
    check_fraction: float  # p in [0, 1]
    score: float  # s = -b p^beta
    index: int  # position in the input list


def mixed_score(b, p, beta=4.0):
    return -b * p**beta


def rank(samples, beta=4.0):
    """Sort (coords, b, p) triples by descending s = -b p^beta; ties keep input order."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    ranked = [RankedSample(c, float(b), float(p), float(mixed_score(b, p, beta)), i)
              for i, (c, b, p) in enumerate(samples)]
    return sorted(ranked, key=lambda r: -r.score)
