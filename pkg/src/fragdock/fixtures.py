"""Synthetic ligands with reasonable 3-D geometry, built by internal coordinates.

Used by the test-suite and the ``verify`` command. Chains are placed with the
natural extension reference frame (NeRF): each new atom is set from a bond
length, bond angle and dihedral relative to three already placed atoms.
"""

from __future__ import annotations

import numpy as np

from .molio import make_graph

CC = 1.54
CC_AR = 1.39
C_AR_C = 1.50
TETRA = np.deg2rad(111.0)


def nerf(a, b, c, length, angle, torsion):
    """Position of d with |cd| = length, angle(b, c, d) = angle, dihedral(a, b, c, d) = torsion."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-length * np.cos(angle),
                   length * np.sin(angle) * np.cos(torsion),
                   length * np.sin(angle) * np.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def _off_axis(b, c):
    """A point that is not collinear with b-c, used when no real reference exists."""
    u = c - b
    trial = np.cross(u, [0.0, 0.0, 1.0])
    if np.linalg.norm(trial) < 1e-6:
        trial = np.cross(u, [0.0, 1.0, 0.0])
    return b + trial / np.linalg.norm(trial)


def tree_coords(parents, torsions=None, lengths=None):
    """Coordinates of an acyclic heavy-atom tree given each atom's parent.

    ``parents[0]`` must be -1 and parents precede children. ``torsions[i]``
    is the dihedral in degrees used to place atom i.
    """
    n = len(parents)
    torsions = [180.0] * n if torsions is None else list(torsions)
    lengths = [CC] * n if lengths is None else list(lengths)
    x = np.zeros((n, 3))
    placed = set()

    def other_neighbor(atom, exclude):
        cands = [parents[atom]] if parents[atom] >= 0 else []
        cands += [j for j in placed if parents[j] == atom]
        cands = [j for j in cands if j not in exclude]
        return cands[0] if cands else None

    for i in range(n):
        p = parents[i]
        if i == 0:
            pass
        elif p == 0 and not any(parents[j] == 0 for j in placed):
            x[i] = x[p] + np.array([lengths[i], 0.0, 0.0])
        else:
            b = other_neighbor(p, {i})
            a = other_neighbor(b, {p, i})
            pa = _off_axis(x[b], x[p]) if a is None else x[a]
            x[i] = nerf(pa, x[b], x[p], lengths[i], TETRA, np.deg2rad(torsions[i]))
        placed.add(i)
    return x


def _tree_graph(name, parents, torsions=None, symbols=None):
    n = len(parents)
    coords = tree_coords(parents, torsions)
    bonds = [(parents[i], i, 1) for i in range(1, n)]
    symbols = symbols or ["C"] * n
    return make_graph(symbols, bonds, coords=coords, name=name)


def _default_torsions(n, phase=0):
    # mix of anti and gauche so no configuration is accidentally symmetric
    cycle = [180.0, 65.0, -170.0, -60.0, 175.0, 70.0]
    return [cycle[(i + phase) % len(cycle)] for i in range(n)]


def chain(n, torsions=None, name=None):
    """Linear alkane heavy-atom chain C_n."""
    parents = [-1] + list(range(n - 1))
    return _tree_graph(name or f"chain{n}", parents, torsions or _default_torsions(n))


def butane():
    return chain(4, name="butane")


def pentane():
    return chain(5, name="pentane")


def hexane():
    return chain(6, name="hexane")


def methylhexane():
    """3-methylhexane: C1-C2-C3(-C7)-C4-C5-C6."""
    parents = [-1, 0, 1, 2, 3, 4, 2]
    tors = [180, 180, 180, 175, -65, 180, 60]
    return _tree_graph("3-methylhexane", parents, tors)


def dimethylheptane():
    """2,4-dimethylheptane drawn as a tree."""
    parents = [-1, 0, 1, 2, 3, 4, 5, 1, 3]
    tors = [180, 180, 180, -170, 70, 180, 65, -60, -170]
    return _tree_graph("2,4-dimethylheptane", parents, tors)


def ethylpentane():
    """3-ethylpentane: three ethyl arms on a central carbon."""
    parents = [-1, 0, 1, 2, 3, 1, 5]
    tors = [180, 180, 180, 180, 170, -60, -70]
    return _tree_graph("3-ethylpentane", parents, tors)


# -- rings ------------------------------------------------------------------

def _hexagon(center, e1, e2, radius=CC_AR):
    ang = np.arange(6) * np.pi / 3
    return center + radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)


def _ring_bonds(offset):
    return [(offset + i, offset + (i + 1) % 6, 4) for i in range(6)]


def benzene():
    x = _hexagon(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    return make_graph(["C"] * 6, _ring_bonds(0), coords=x, name="benzene")


def biphenyl(twist_deg=40.0):
    ex, ey, ez = np.eye(3)
    a = _hexagon(np.zeros(3), ex, ey)
    c2 = np.array([2 * CC_AR + C_AR_C, 0, 0])
    t = np.deg2rad(twist_deg)
    # second ring starts at its ipso carbon, facing the first ring
    b = _hexagon(c2, -ex, np.cos(t) * ey + np.sin(t) * ez)
    bonds = _ring_bonds(0) + _ring_bonds(6) + [(0, 6, 1)]
    return make_graph(["C"] * 12, bonds, coords=np.vstack([a, b]), name="biphenyl")


def _substituent(ring_xyz, ring_center, atom, length=C_AR_C):
    u = ring_xyz[atom] - ring_center
    return ring_xyz[atom] + length * u / np.linalg.norm(u)


def diethylbenzene():
    """para-diethylbenzene: two torsions that move disjoint atom sets."""
    ring = _hexagon(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    xs = list(ring)
    bonds = _ring_bonds(0)
    for atom, tor in ((0, 80.0), (3, -100.0)):
        ca = _substituent(ring, np.zeros(3), atom)
        cb = nerf(ring[(atom + 1) % 6], ring[atom], ca, CC, TETRA, np.deg2rad(tor))
        i = len(xs)
        xs += [ca, cb]
        bonds += [(atom, i, 1), (i, i + 1, 1)]
    return make_graph(["C"] * len(xs), bonds, coords=np.array(xs), name="diethylbenzene")


def ring_linker_ring(n_linker=2):
    """Phenyl-(CH2)n-phenyl with an all-anti zig-zag linker."""
    ring1 = _hexagon(np.zeros(3), np.array([1.0, 0, 0]), np.array([0, 1.0, 0]))
    xs = list(ring1)
    bonds = _ring_bonds(0)
    prev2, prev1, cur = ring1[1], ring1[0], _substituent(ring1, np.zeros(3), 0)
    xs.append(cur)
    bonds.append((0, 6, 1))
    tors = [100.0, 180.0, -175.0, 185.0, 60.0]
    for k in range(1, n_linker):
        nxt = nerf(prev2, prev1, cur, CC, TETRA, np.deg2rad(tors[k % len(tors)]))
        xs.append(nxt)
        bonds.append((len(xs) - 2, len(xs) - 1, 1))
        prev2, prev1, cur = prev1, cur, nxt
    ipso = nerf(prev2, prev1, cur, C_AR_C, TETRA, np.deg2rad(175.0))
    # second ring: ipso atom bonded to the last linker carbon, ring plane contains the bond axis
    axis = ipso - cur
    axis /= np.linalg.norm(axis)
    side = np.cross(axis, [0.0, 0.0, 1.0])
    if np.linalg.norm(side) < 1e-6:
        side = np.cross(axis, [0.0, 1.0, 0.0])
    side /= np.linalg.norm(side)
    center = ipso + CC_AR * axis
    ring2 = _hexagon(center, -axis, side)
    i0 = len(xs)
    xs += list(ring2)
    bonds += _ring_bonds(i0) + [(i0 - 1, i0, 1)]
    return make_graph(["C"] * len(xs), bonds, coords=np.array(xs), name=f"ring-C{n_linker}-ring")


# -- corpora ----------------------------------------------------------------

def branched_fixtures():
    return [methylhexane(), dimethylheptane(), ethylpentane()]


def chain_corpus():
    """Flexible acyclic chains used for fragment-count statistics.

    Linear alkanes C4..C15 plus every branched tree above and a few extra
    methyl-branched chains; the list is fixed, not tuned.
    """
    mols = [chain(n) for n in range(4, 16)]
    mols += branched_fixtures()
    for n in (6, 8, 10, 12, 14):
        # methyl on the third carbon of an n-chain
        parents = [-1] + list(range(n - 1)) + [2]
        tors = _default_torsions(n + 1, phase=n)
        mols.append(_tree_graph(f"3-methyl-C{n}", parents, tors))
    return mols


def all_fixtures():
    mols = [butane(), pentane(), hexane(), benzene(), biphenyl(), diethylbenzene(), ring_linker_ring(2),
            ring_linker_ring(3)]
    mols += branched_fixtures()
    return mols


def pocket_around(coords, n=40, radius=6.0, seed=0):
    """Pseudo pocket: atoms on a noisy sphere around the ligand centroid."""
    rng = np.random.default_rng(seed)
    c = np.asarray(coords).mean(axis=0)
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius + rng.uniform(-0.5, 0.5, size=(n, 1))
    return ["C"] * n, c + r * v
