"""Kabsch superposition, RMSD, dihedrals and joint rigid + torsional registration."""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateConfiguration, DimensionMismatch, UndefinedDihedral
from .liegroup import RigidTransform, apply, exp_so3

_RANK_TOL = 1e-8
_COLLINEAR_TOL = 1e-8


def _as_points(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise DimensionMismatch(f"expected (n, 3) points, got {P.shape}")
    return P


def kabsch(P, Q):
    """Rigid transform minimising sum |p + R P_i - Q_i|^2, with det R = +1."""
    P, Q = _as_points(P), _as_points(Q)
    if P.shape != Q.shape:
        raise DimensionMismatch("point sets differ in size")
    if len(P) < 3:
        raise DegenerateConfiguration("need at least 3 points")
    cp, cq = P.mean(axis=0), Q.mean(axis=0)
    X, Y = P - cp, Q - cq
    for Z in (X, Y):
        s = np.linalg.svd(Z, compute_uv=False)
        if s[0] == 0 or s[1] < _RANK_TOL * s[0]:
            raise DegenerateConfiguration("point set is collinear")
    U, _, Vt = np.linalg.svd(X.T @ Y)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(cq - R @ cp, R)


def rmsd(P, Q):
    """Plain (not symmetry-corrected) root-mean-square deviation."""
    P, Q = np.asarray(P, dtype=float), np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise DimensionMismatch("point sets differ in size")
    return float(np.sqrt(np.mean(np.sum((P - Q) ** 2, axis=-1))))


def superpose(P, Q):
    """P moved onto Q and the resulting RMSD."""
    moved = apply(kabsch(P, Q), P)
    return moved, rmsd(moved, Q)


# -- dihedrals --------------------------------------------------------------

@dataclass(frozen=True)
class DihedralSpec:
    A: int
    B: int
    C: int
    D: int
    moving: tuple  # atoms on C's side of B-C (they rotate)


def rotating_side(g, B, C):
    G = g.to_networkx()
    G.remove_edge(B, C)
    side = nx.node_connected_component(G, C)
    if B in side:
        raise UndefinedDihedral(f"bond {B}-{C} lies in a ring")
    return tuple(sorted(side))


def dihedral_spec(g, bond):
    """Spec for a torsional bond id: A, D are the smallest other neighbours of B, C."""
    B, C, _ = g.bonds[bond]
    A = min(a for a in g.neighbors(B) if a != C)
    D = min(d for d in g.neighbors(C) if d != B)
    return DihedralSpec(A, B, C, D, rotating_side(g, B, C))


def torsion_specs(g):
    return [dihedral_spec(g, k) for k in g.torsional_bonds]


def measure_dihedral(coords, spec):
    """Signed dihedral A-B-C-D in (-pi, pi]; grows with a right-handed turn of D about B->C."""
    x = np.asarray(coords, dtype=float)
    b0 = x[spec.A] - x[spec.B]
    b1 = x[spec.C] - x[spec.B]
    b2 = x[spec.D] - x[spec.C]
    n = np.linalg.norm(b1)
    if n < _COLLINEAR_TOL:
        raise UndefinedDihedral("B and C coincide")
    b1 = b1 / n
    v = b0 - np.dot(b0, b1) * b1
    w = b2 - np.dot(b2, b1) * b1
    if np.linalg.norm(v) < _COLLINEAR_TOL or np.linalg.norm(w) < _COLLINEAR_TOL:
        raise UndefinedDihedral("collinear atoms around the torsion")
    return float(np.arctan2(np.dot(np.cross(b1, v), w), np.dot(v, w)))


def rotate_torsion(coords, spec, delta):
    """Rotate the moving side about the B->C axis by ``delta`` radians."""
    x = np.array(coords, dtype=float)
    axis = x[spec.C] - x[spec.B]
    norm = np.linalg.norm(axis)
    if norm < _COLLINEAR_TOL:
        raise UndefinedDihedral("B and C coincide")
    R = exp_so3(axis / norm * delta)
    idx = list(spec.moving)
    x[idx] = (x[idx] - x[spec.C]) @ R.T + x[spec.C]
    return x


def set_dihedral(coords, spec, angle):
    return rotate_torsion(coords, spec, angle - measure_dihedral(coords, spec))


# -- joint registration -----------------------------------------------------

def _fit_rmsd(x, target):
    return superpose(x, target)[1]


def joint_align(conformer, target, specs, max_rounds=50, tol=1e-4, n_scan=36, seed_dihedrals=True):
    """Coordinate descent over dihedrals with Kabsch refits.

    With ``seed_dihedrals`` the conformer's dihedrals are first copied from
    the target (dihedrals are rigid-motion invariant); the copy is kept only
    if it lowers the fitted RMSD. Each round then scans every torsion on a
    coarse grid, refines the best grid point by golden-section search, and
    keeps the move only if the fitted RMSD improves.

    Returns (aligned coords, final RMSD, per-round RMSDs).
    """
    x = np.array(conformer, dtype=float)
    target = np.asarray(target, dtype=float)
    best = _fit_rmsd(x, target)
    history = [best]
    if seed_dihedrals and specs:
        y = x
        try:
            for spec in specs:
                y = set_dihedral(y, spec, measure_dihedral(target, spec))
        except UndefinedDihedral:
            y = x
        val = _fit_rmsd(y, target)
        if val < best:
            x, best = y, val
            history.append(best)
    step = 2 * np.pi / n_scan
    for _ in range(max_rounds):
        start = best
        for spec in specs:
            base = x

            def f(delta, base=base, spec=spec):
                return _fit_rmsd(rotate_torsion(base, spec, delta), target)

            grid = np.arange(n_scan) * step
            vals = np.array([f(d) for d in grid])
            j = int(np.argmin(vals))
            cand, val = grid[j], vals[j]
            try:
                res = minimize_scalar(f, bracket=(grid[j] - step, grid[j], grid[j] + step),
                                      method="golden", options={"xtol": 1e-10})
                if res.fun < val:
                    cand, val = res.x, res.fun
            except ValueError:
                pass  # flat neighbourhood: keep the grid point
            if val < best:
                x, best = rotate_torsion(base, spec, cand), val
        history.append(best)
        if start - best < tol:
            break
    aligned, final = superpose(x, target)
    return aligned, final, history
