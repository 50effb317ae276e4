"""MOL/SDF V2000 subset parsing, ring and torsion perception, JSON envelopes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from .errors import DisconnectedError, InputError, ParseError

SCHEMA_VERSION = 1
AROMATIC = 4

# V2000 atom-block charge code -> formal charge
_CHARGE_CODES = {0: 0, 1: 3, 2: 2, 3: 1, 4: 0, 5: -1, 6: -2, 7: -3}
_CHARGE_TO_CODE = {3: 1, 2: 2, 1: 3, 0: 0, -1: 5, -2: 6, -3: 7}


@dataclass(frozen=True)
class MolecularGraph:
    symbols: tuple
    bonds: tuple  # (i, j, order) with i < j; order 4 = aromatic
    charges: tuple = ()
    coords: np.ndarray | None = None
    name: str = ""
    atom_in_ring: tuple = ()
    bond_in_ring: tuple = ()
    rotatable: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_atoms(self):
        return len(self.symbols)

    @property
    def n_bonds(self):
        return len(self.bonds)

    def neighbors(self, i):
        return [b if a == i else a for a, b, _ in self.bonds if i in (a, b)]

    def bond_index(self, i, j):
        key = (min(i, j), max(i, j))
        for k, (a, b, _) in enumerate(self.bonds):
            if (a, b) == key:
                return k
        raise KeyError(key)

    def to_networkx(self):
        g = nx.Graph()
        g.add_nodes_from(range(self.n_atoms))
        for k, (a, b, order) in enumerate(self.bonds):
            g.add_edge(a, b, index=k, order=order)
        return g

    @property
    def torsional_bonds(self):
        return [k for k, r in enumerate(self.rotatable) if r]

    def with_coords(self, coords):
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.n_atoms, 3):
            raise InputError(f"expected ({self.n_atoms}, 3) coordinates, got {coords.shape}")
        return replace(self, coords=coords)


def make_graph(symbols, bonds, coords=None, charges=None, name=""):
    """Validate, perceive rings and rotatable bonds."""
    n = len(symbols)
    if n == 0:
        raise ParseError("molecule has no atoms")
    seen = set()
    norm = []
    for i, j, order in bonds:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise InputError(f"invalid bond ({i}, {j})")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise InputError(f"duplicate bond {key}")
        seen.add(key)
        norm.append((key[0], key[1], int(order)))
    g = MolecularGraph(
        symbols=tuple(symbols),
        bonds=tuple(norm),
        charges=tuple(charges) if charges is not None else (0,) * n,
        coords=None if coords is None else np.asarray(coords, dtype=float).reshape(n, 3),
        name=name,
    )
    if n > 1 and not nx.is_connected(g.to_networkx()):
        raise DisconnectedError("more than one heavy-atom component")
    g = detect_rings(g)
    rot = set(detect_torsional_bonds(g))
    return replace(g, rotatable=tuple(k in rot for k in range(g.n_bonds)))


def detect_rings(g):
    """Ring flags: a bond is in a ring iff it lies on some cycle (is not a bridge)."""
    G = g.to_networkx()
    bridges = {tuple(sorted(e)) for e in nx.bridges(G)}
    bond_ring = tuple((a, b) not in bridges for a, b, _ in g.bonds)
    atom_ring = [False] * g.n_atoms
    for (a, b, _), r in zip(g.bonds, bond_ring):
        if r:
            atom_ring[a] = atom_ring[b] = True
    return replace(g, atom_in_ring=tuple(atom_ring), bond_in_ring=bond_ring)


def torsional_rule(n_atoms, bonds, bond_in_ring):
    """Indices of bonds that are single, acyclic, non-linear, with both ends of degree >= 2."""
    degree = np.zeros(n_atoms, dtype=int)
    linear = np.zeros(n_atoms, dtype=bool)
    for a, b, order in bonds:
        degree[a] += 1
        degree[b] += 1
        if order == 3:
            linear[a] = linear[b] = True
    out = []
    for k, (a, b, order) in enumerate(bonds):
        if order != 1 or bond_in_ring[k]:
            continue
        if degree[a] < 2 or degree[b] < 2 or linear[a] or linear[b]:
            continue
        out.append(k)
    return out


def detect_torsional_bonds(g):
    return torsional_rule(g.n_atoms, g.bonds, g.bond_in_ring)


# -- V2000 -----------------------------------------------------------------

def _int_field(line, start, stop, lineno, what):
    try:
        return int(line[start:stop])
    except ValueError:
        raise ParseError(f"bad {what} field {line[start:stop]!r}", lineno) from None


def parse_sdf(text, keep_hydrogens=False):
    """Parse the first record of an SDF / MOL V2000 text."""
    lines = text.splitlines()
    if len(lines) < 4:
        raise ParseError("truncated header: no counts line", len(lines))
    name = lines[0].strip()
    counts = lines[3]
    if "V3000" in counts:
        raise ParseError("V3000 connection tables are not supported", 4)
    n_atoms = _int_field(counts, 0, 3, 4, "atom count")
    n_bonds = _int_field(counts, 3, 6, 4, "bond count")
    if n_atoms <= 0:
        raise ParseError("molecule has no atoms", 4)
    if len(lines) < 4 + n_atoms + n_bonds:
        raise ParseError("file ends before atom/bond blocks are complete", len(lines))

    symbols, coords, charges = [], [], []
    for k in range(n_atoms):
        lineno = 5 + k
        line = lines[4 + k]
        try:
            xyz = [float(line[0:10]), float(line[10:20]), float(line[20:30])]
        except ValueError:
            raise ParseError("bad coordinate field", lineno) from None
        sym = line[31:34].strip()
        if not sym or not sym[0].isalpha():
            raise ParseError(f"bad element symbol {sym!r}", lineno)
        code = line[36:39].strip()
        charges.append(_CHARGE_CODES.get(int(code), 0) if code.lstrip("-").isdigit() else 0)
        symbols.append(sym)
        coords.append(xyz)

    bonds = []
    for k in range(n_bonds):
        lineno = 5 + n_atoms + k
        line = lines[4 + n_atoms + k]
        i = _int_field(line, 0, 3, lineno, "bond atom")
        j = _int_field(line, 3, 6, lineno, "bond atom")
        order = _int_field(line, 6, 9, lineno, "bond order")
        if not (1 <= i <= n_atoms and 1 <= j <= n_atoms) or i == j:
            raise ParseError(f"bond references invalid atoms {i}, {j}", lineno)
        if order not in (1, 2, 3, 4):
            raise ParseError(f"unsupported bond order {order}", lineno)
        bonds.append((i - 1, j - 1, order))

    block_charges = True
    for lineno, line in enumerate(lines[4 + n_atoms + n_bonds:], 5 + n_atoms + n_bonds):
        if line.startswith("M  CHG"):
            if block_charges:  # any M  CHG line supersedes every atom-block code
                charges = [0] * n_atoms
                block_charges = False
            parts = line.split()
            try:
                for a, c in zip(parts[3::2], parts[4::2]):
                    if not 1 <= int(a) <= n_atoms:
                        raise IndexError
                    charges[int(a) - 1] = int(c)
            except (ValueError, IndexError):
                raise ParseError("malformed M  CHG line", lineno) from None
        if line.startswith("M  END") or line.startswith("$$$$"):
            break

    if not keep_hydrogens:
        heavy = [i for i, s in enumerate(symbols) if s.upper() not in ("H", "D")]
        if not heavy:
            raise ParseError("molecule has no heavy atoms", 4)
        remap = {old: new for new, old in enumerate(heavy)}
        symbols = [symbols[i] for i in heavy]
        coords = [coords[i] for i in heavy]
        charges = [charges[i] for i in heavy]
        bonds = [(remap[i], remap[j], o) for i, j, o in bonds if i in remap and j in remap]

    return make_graph(symbols, bonds, coords=coords, charges=charges, name=name)


def write_sdf(g, coords=None, name=None, record_end=True):
    coords = g.coords if coords is None else np.asarray(coords, dtype=float)
    if coords is None:
        coords = np.zeros((g.n_atoms, 3))
    out = [name if name is not None else g.name, "  fragdock", ""]
    out.append(f"{g.n_atoms:3d}{g.n_bonds:3d}  0  0  0  0  0  0  0  0999 V2000")
    for sym, (x, y, z), chg in zip(g.symbols, coords, g.charges):
        code = _CHARGE_TO_CODE.get(chg, 0)
        out.append(f"{x:10.4f}{y:10.4f}{z:10.4f} {sym:<3} 0{code:3d}  0  0  0  0  0  0  0  0  0  0")
    for a, b, order in g.bonds:
        out.append(f"{a + 1:3d}{b + 1:3d}{order:3d}  0")
    charged = [(i, c) for i, c in enumerate(g.charges) if c]
    if charged:
        out.append(f"M  CHG{len(charged):3d}" + "".join(f"{i + 1:4d}{c:4d}" for i, c in charged))
    out.append("M  END")
    if record_end:
        out.append("$$$$")
    return "\n".join(out) + "\n"


def split_sdf_records(text):
    recs, cur = [], []
    for line in text.splitlines():
        if line.startswith("$$$$"):
            recs.append("\n".join(cur) + "\n")
            cur = []
        else:
            cur.append(line)
    if any(s.strip() for s in cur):
        recs.append("\n".join(cur) + "\n")
    return recs


def read_sdf(path):
    with open(path) as fh:
        return parse_sdf(fh.read())


# -- JSON envelopes ---------------------------------------------------------

def envelope(kind, payload, **meta):
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind}
    doc.update(meta)
    doc.update(payload)
    return doc


def check_envelope(doc, kind):
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise InputError(f"expected a {kind!r} document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def graph_to_json(g):
    return envelope("graph", {
        "name": g.name,
        "atoms": [{"element": s, "charge": c} for s, c in zip(g.symbols, g.charges)],
        "bonds": [list(b) for b in g.bonds],
        "coords": None if g.coords is None else g.coords.tolist(),
    })


def graph_from_json(doc):
    check_envelope(doc, "graph")
    return make_graph(
        [a["element"] for a in doc["atoms"]],
        [tuple(b) for b in doc["bonds"]],
        coords=doc.get("coords"),
        charges=[a.get("charge", 0) for a in doc["atoms"]],
        name=doc.get("name", ""),
    )


def pocket_to_json(elements, coords, **meta):
    coords = np.asarray(coords, dtype=float)
    atoms = [{"element": e, "x": float(x), "y": float(y), "z": float(z)}
             for e, (x, y, z) in zip(elements, coords)]
    return envelope("pocket", {"atoms": atoms}, **meta)


def pocket_from_json(doc):
    """Return (elements, coords) from a pocket document."""
    check_envelope(doc, "pocket")
    atoms = doc.get("atoms") or []
    if not atoms:
        raise InputError("pocket has no atoms")
    try:
        elements = [a["element"] for a in atoms]
        coords = np.array([[a["x"], a["y"], a["z"]] for a in atoms], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed pocket atom record: {exc}") from None
    return elements, coords


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
