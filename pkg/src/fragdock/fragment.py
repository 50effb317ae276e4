"""Rigid fragments, FR3D merge enumeration, triangulation edges and the phi map.

Cutting a torsional bond B-C splits the ligand and leaves a dummy copy of C
inside B's fragment (and of B inside C's). After merges some dummies would pin
a dihedral that is no longer cut; those are pruned. A dummy is treated as
over-constrained when the real atom it hangs from is an endpoint of a merged
torsional bond in the same fragment.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from .errors import CombinatorialLimit, DimensionMismatch, InputError, NoCoordinates
from .liegroup import project_to_so3
from .molio import SCHEMA_VERSION, check_envelope, envelope, graph_from_json, graph_to_json, torsional_rule

MAX_CUT_SETS = 10**6


@dataclass(frozen=True)
class Dummy:
    mirror: int  # parent atom whose position the dummy copies
    anchor: int  # real atom of this fragment bonded to it
    bond: int  # owning torsional bond id
    free: bool


@dataclass(frozen=True)
class Fragment:
    atoms: tuple  # real atoms, sorted
    dummies: tuple
    local_coords: np.ndarray | None = None  # rows follow ``members``

    @property
    def free_dummies(self):
        return tuple(d for d in self.dummies if d.free)

    @property
    def members(self):
        """Parent indices of every rigid point: real atoms then free dummies."""
        return self.atoms + tuple(d.mirror for d in self.free_dummies)

    @property
    def n_real(self):
        return len(self.atoms)

    @property
    def size(self):
        return len(self.atoms) + len(self.free_dummies)


@dataclass(frozen=True)
class Torsion:
    bond: int
    B: int
    C: int
    frag_B: int
    frag_C: int
    merged: bool


@dataclass(frozen=True)
class FragmentSet:
    graph: object
    cuts: frozenset
    fragments: tuple
    torsions: tuple
    edges: tuple  # (i, j, reference distance)
    owner: tuple  # fragment id per real atom

    @property
    def m(self):
        return len(self.fragments)

    @property
    def k(self):
        return len(self.torsions)

    def scaled(self, factor):
        """Same fragments with local coordinates and edge lengths divided by ``factor``."""
        frags = tuple(Fragment(f.atoms, f.dummies, f.local_coords / factor) for f in self.fragments)
        edges = tuple((i, j, d / factor) for i, j, d in self.edges)
        return FragmentSet(self.graph, self.cuts, frags, self.torsions, edges, self.owner)

    def rotated_frames(self, Rs):
        """Re-express each fragment in a rotated local frame: x~ -> R_s x~."""
        Rs = np.asarray(Rs, dtype=float)
        frags = tuple(Fragment(f.atoms, f.dummies, f.local_coords @ R.T)
                      for f, R in zip(self.fragments, Rs))
        return FragmentSet(self.graph, self.cuts, frags, self.torsions, self.edges, self.owner)


@dataclass(frozen=True)
class PoseState:
    """m rigid transforms stored as stacked arrays p (m, 3) and R (m, 3, 3)."""

    p: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        R = np.asarray(self.R, dtype=float).reshape(-1, 3, 3)
        if len(p) != len(R):
            raise DimensionMismatch("p and R have different fragment counts")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "R", R)

    @property
    def m(self):
        return len(self.p)

    @classmethod
    def identity(cls, m):
        return cls(np.zeros((m, 3)), np.tile(np.eye(3), (m, 1, 1)))

    def rotate(self, R0, shift=None):
        """Left action of a global rigid motion on every fragment."""
        shift = np.zeros(3) if shift is None else np.asarray(shift, dtype=float)
        return PoseState(self.p @ np.asarray(R0).T + shift, np.asarray(R0) @ self.R)


# -- topology ---------------------------------------------------------------

def _torsional(g):
    return [k for k, r in enumerate(g.rotatable) if r]


def _partition(g, cuts):
    """Real-atom components after removing ``cuts``, ordered by smallest atom."""
    G = nx.Graph()
    G.add_nodes_from(range(g.n_atoms))
    G.add_edges_from((a, b) for k, (a, b, _) in enumerate(g.bonds) if k not in cuts)
    comps = sorted((tuple(sorted(c)) for c in nx.connected_components(G)), key=lambda c: c[0])
    owner = [0] * g.n_atoms
    for fid, comp in enumerate(comps):
        for a in comp:
            owner[a] = fid
    return comps, owner


def _topology(g, cuts):
    cuts = frozenset(cuts)
    comps, owner = _partition(g, cuts)
    merged_ends = set()
    for k in _torsional(g):
        if k not in cuts:
            merged_ends.update(g.bonds[k][:2])
    dummies = [[] for _ in comps]
    for k in sorted(cuts):
        a, b, _ = g.bonds[k]
        dummies[owner[a]].append(Dummy(b, a, k, a not in merged_ends))
        dummies[owner[b]].append(Dummy(a, b, k, b not in merged_ends))
    return comps, [tuple(d) for d in dummies], owner


def _local_torsions(g, atoms, dummies):
    """Torsional bonds detected inside one fragment (real atoms + free dummies)."""
    index = {a: i for i, a in enumerate(atoms)}
    aset = set(atoms)
    bonds, ring, parent_ids = [], [], []
    for k, (a, b, order) in enumerate(g.bonds):
        if a in aset and b in aset:
            bonds.append((index[a], index[b], order))
            ring.append(g.bond_in_ring[k])
            parent_ids.append(k)
    n = len(atoms)
    for d in dummies:
        if d.free:
            bonds.append((index[d.anchor], n, 1))
            ring.append(False)
            parent_ids.append(None)
            n += 1
    return [parent_ids[i] for i in torsional_rule(n, bonds, ring) if parent_ids[i] is not None]


def valid_state(g, cuts):
    """True when no fragment larger than 3 points keeps an internal torsion."""
    comps, dummies, _ = _topology(g, cuts)
    for atoms, dums in zip(comps, dummies):
        size = len(atoms) + sum(d.free for d in dums)
        if size > 3 and _local_torsions(g, atoms, dums):
            return False
    return True


def rec_merge(g, all_cuts=None, limit=MAX_CUT_SETS):
    """Every cut set reachable from the full set by dropping cuts in candidate order
    while :func:`valid_state` holds, the full set included."""
    cand = tuple(sorted(_torsional(g) if all_cuts is None else all_cuts))
    found = {frozenset(cand)}
    seen = set()

    def recurse(cur, start):
        if (cur, start) in seen:
            return
        seen.add((cur, start))
        for i in range(start, len(cand)):
            b = cand[i]
            if b not in cur:
                continue
            new = cur - {b}
            if new in found or valid_state(g, new):
                if new not in found:
                    found.add(new)
                    if len(found) > limit:
                        raise CombinatorialLimit(f"more than {limit} valid cut sets")
                recurse(new, i + 1)

    recurse(frozenset(cand), 0)
    return sorted(found, key=lambda s: (len(s), sorted(s)))


def irreducible(g, sets):
    """Cut sets from which no single further cut can be dropped validly."""
    return [s for s in sets if not any(valid_state(g, s - {c}) for c in s)]


# -- geometry ---------------------------------------------------------------

def _require_coords(g, coords=None):
    coords = g.coords if coords is None else np.asarray(coords, dtype=float)
    if coords is None:
        raise NoCoordinates("ligand has no conformer coordinates")
    if coords.shape != (g.n_atoms, 3):
        raise DimensionMismatch(f"expected ({g.n_atoms}, 3) coordinates, got {coords.shape}")
    return coords


def cut_fragments(g, cuts, coords=None):
    """Fragments for a cut set, with centred local coordinates from the conformer."""
    coords = _require_coords(g, coords)
    comps, dummies, _ = _topology(g, cuts)
    out = []
    for atoms, dums in zip(comps, dummies):
        f = Fragment(atoms, dums)
        x = coords[list(f.members)]
        out.append(Fragment(atoms, dums, x - x.mean(axis=0)))
    return out


def triangulation_edges(g, fragments, cuts, owner, coords=None):
    """Cross-fragment (A, C) and (B, D) distances for every cut torsion."""
    coords = _require_coords(g, coords)
    edges = {}
    for k in sorted(cuts):
        B, C, _ = g.bonds[k]
        A = [a for a in g.neighbors(B) if a != C and owner[a] == owner[B]]
        D = [d for d in g.neighbors(C) if d != B and owner[d] == owner[C]]
        pairs = []
        if A:
            pairs.append((min(A), C))
        if D:
            pairs.append((B, min(D)))
        for i, j in pairs:
            key = (min(i, j), max(i, j))
            edges.setdefault(key, float(np.linalg.norm(coords[i] - coords[j])))
    return tuple((i, j, d) for (i, j), d in sorted(edges.items()))


def build_fragment_set(g, cuts, coords=None):
    coords = _require_coords(g, coords)
    cuts = frozenset(cuts)
    frags = cut_fragments(g, cuts, coords)
    _, _, owner = _topology(g, cuts)
    torsions = tuple(
        Torsion(k, g.bonds[k][0], g.bonds[k][1], owner[g.bonds[k][0]], owner[g.bonds[k][1]], k not in cuts)
        for k in _torsional(g)
    )
    edges = triangulation_edges(g, frags, cuts, owner, coords)
    return FragmentSet(g, cuts, tuple(frags), torsions, edges, tuple(owner))


def fr3d(g, seed=0, mode="irreducible", limit=MAX_CUT_SETS):
    """Sample a cut set uniformly and build its fragment set.

    ``mode="irreducible"`` samples among cut sets that admit no further valid
    merge; ``mode="all"`` samples among every set returned by :func:`rec_merge`.
    """
    sets = rec_merge(g, limit=limit)
    if mode == "irreducible":
        sets = irreducible(g, sets)
    elif mode != "all":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    return build_fragment_set(g, sets[int(rng.integers(len(sets)))])


# -- phi --------------------------------------------------------------------

def phi(z, fs):
    """Ligand coordinates (real atoms only) from fragment poses."""
    if z.m != fs.m:
        raise DimensionMismatch(f"pose has {z.m} fragments, set has {fs.m}")
    out = np.empty((fs.graph.n_atoms, 3))
    for f, p, R in zip(fs.fragments, z.p, z.R):
        out[list(f.atoms)] = f.local_coords[: f.n_real] @ R.T + p
    return out


def fragment_points(z, fs):
    """Global positions of every rigid point (real + free dummies) per fragment."""
    return [f.local_coords @ R.T + p for f, p, R in zip(fs.fragments, z.p, z.R)]


def phi_inverse(coords, fs):
    """Centroid poses with identity frames, and the set recentred on ``coords``."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (fs.graph.n_atoms, 3):
        raise DimensionMismatch(f"expected ({fs.graph.n_atoms}, 3) coordinates, got {coords.shape}")
    frags, ps = [], []
    for f in fs.fragments:
        x = coords[list(f.members)]
        c = x.mean(axis=0)
        frags.append(Fragment(f.atoms, f.dummies, x - c))
        ps.append(c)
    new = FragmentSet(fs.graph, fs.cuts, tuple(frags), fs.torsions, fs.edges, fs.owner)
    return PoseState(np.array(ps), np.tile(np.eye(3), (fs.m, 1, 1))), new


def fit_pose(coords, fs):
    """Least-squares pose of each rigid fragment onto ``coords`` (Kabsch per fragment)."""
    coords = np.asarray(coords, dtype=float)
    ps, Rs = [], []
    for f in fs.fragments:
        x = coords[list(f.members)]
        c = x.mean(axis=0)
        H = f.local_coords.T @ (x - c)
        Rs.append(project_to_so3(H.T) if f.size > 1 else np.eye(3))
        ps.append(c)
    return PoseState(np.array(ps), np.array(Rs))


def distance_mismatch(coords, fs):
    """Current minus reference length of every triangulation edge."""
    coords = np.asarray(coords, dtype=float)
    return np.array([np.linalg.norm(coords[i] - coords[j]) - d for i, j, d in fs.edges])


def law_of_cosines_angle(a, b, c):
    """Angle opposite side ``c`` in a triangle with sides a, b, c."""
    return np.arccos(np.clip((a * a + b * b - c * c) / (2 * a * b), -1.0, 1.0))


# -- JSON -------------------------------------------------------------------

def fragment_set_to_json(fs, **meta):
    frags = [{
        "atoms": list(f.atoms),
        "dummies": [{"mirror": d.mirror, "anchor": d.anchor, "bond": d.bond, "free": d.free}
                    for d in f.dummies],
        "local_coords": np.round(f.local_coords, 10).tolist(),
    } for f in fs.fragments]
    return envelope("fragment_set", {
        "graph": graph_to_json(fs.graph),
        "cuts": sorted(fs.cuts),
        "m": fs.m,
        "k": fs.k,
        "fragments": frags,
        "torsions": [{"bond": t.bond, "B": t.B, "C": t.C, "frag_B": t.frag_B,
                      "frag_C": t.frag_C, "merged": t.merged} for t in fs.torsions],
        "edges": [[i, j, d] for i, j, d in fs.edges],
    }, **meta)


def fragment_set_from_json(doc):
    check_envelope(doc, "fragment_set")
    g = graph_from_json(doc["graph"])
    try:
        frags = tuple(
            Fragment(tuple(f["atoms"]), tuple(Dummy(**d) for d in f["dummies"]),
                     np.asarray(f["local_coords"], dtype=float))
            for f in doc["fragments"]
        )
        torsions = tuple(Torsion(**t) for t in doc["torsions"])
        edges = tuple((int(i), int(j), float(d)) for i, j, d in doc["edges"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed fragment set: {exc}") from None
    owner = [0] * g.n_atoms
    for fid, f in enumerate(frags):
        for a in f.atoms:
            owner[a] = fid
    return FragmentSet(g, frozenset(doc["cuts"]), frags, torsions, edges, tuple(owner))


def pose_to_json(z, **meta):
    return envelope("pose", {"p": z.p.tolist(), "R": z.R.tolist()}, **meta)


def pose_from_json(doc):
    check_envelope(doc, "pose")
    return PoseState(np.asarray(doc["p"]), np.asarray(doc["R"]))


__all__ = [
    "Dummy", "Fragment", "FragmentSet", "PoseState", "Torsion", "SCHEMA_VERSION",
    "build_fragment_set", "cut_fragments", "distance_mismatch", "fit_pose", "fr3d",
    "fragment_points", "irreducible", "law_of_cosines_angle", "phi", "phi_inverse",
    "rec_merge", "triangulation_edges", "valid_state",
]
