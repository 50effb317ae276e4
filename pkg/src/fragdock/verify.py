"""Self-test suites run by ``fragdock verify`` on the bundled fixtures."""

from __future__ import annotations

import numpy as np

from . import fixtures, igso3
from .align import joint_align, kabsch, measure_dihedral, rotate_torsion, set_dihedral, torsion_specs
from .audit import fragment_gram, torsional_gram
from .diffusion import DiffusionSchedule
from .fragment import build_fragment_set, fr3d, phi, phi_inverse
from .liegroup import RigidTransform, apply, exp_so3, geodesic_angle, log_so3, orthonormality_error
from .sampler import anneal_gammas, draw_noise, karras_grid, reverse_trajectory, sample_prior
from .scorehead import OracleScoreModel


def _liegroup(rng):
    out = []
    for _ in range(200):
        w = rng.standard_normal(3)
        w *= rng.uniform(0, np.pi - 0.01) / np.linalg.norm(w)
        R = exp_so3(w)
        out.append(np.linalg.norm(log_so3(R) - w) < 1e-9 and orthonormality_error(R) < 1e-12)
    return out


def _igso3(table):
    out = []
    omega = np.linspace(0.05, np.pi - 0.05, 50)
    uniform = igso3.uniform_angle_density(omega)
    out.append(np.abs(igso3.density(table, omega, 10.0) - uniform).max() < 1e-3)
    for sigma in (0.2, 0.5, 1.0, 2.0):
        cdf = igso3.angle_cdf(table, sigma)
        out.append(abs(cdf[-1] - 1) < 1e-6 and bool(np.all(np.diff(cdf) >= -1e-12)))
    return out


def _fragment():
    out = []
    for g in fixtures.all_fixtures():
        k = len(g.torsional_bonds)
        a, b = fr3d(g, seed=3), fr3d(g, seed=3)
        atoms = sorted(x for f in a.fragments for x in f.atoms)
        z, fs = phi_inverse(g.coords, a)
        out.append(a.m <= k + 1 and atoms == list(range(g.n_atoms)) and a.cuts == b.cuts
                   and np.abs(phi(z, fs) - g.coords).max() < 1e-12)
    return out


def _align(rng):
    out = []
    for g in fixtures.branched_fixtures() + [fixtures.hexane()]:
        specs = torsion_specs(g)
        R = exp_so3(rng.standard_normal(3))
        moved = apply(RigidTransform(rng.standard_normal(3), R), g.coords)
        T = kabsch(g.coords, moved)
        out.append(np.abs(apply(T, g.coords) - moved).max() < 1e-10)
        x = g.coords
        for s in specs:
            x = rotate_torsion(x, s, rng.uniform(-1, 1))
        target = set_dihedral(x, specs[0], 1.0)
        out.append(abs(measure_dihedral(target, specs[0]) - 1.0) < 1e-9)
        _, r, _ = joint_align(g.coords, target, specs)
        out.append(r < 0.05)
    return out


def _audit():
    out = []
    for g in [fixtures.pentane()] + fixtures.branched_fixtures():
        rep = torsional_gram(g, g.coords, torsion_specs(g))
        fs = build_fragment_set(g, frozenset(g.torsional_bonds))
        z, fs = phi_inverse(g.coords, fs)
        fg = fragment_gram(fs, z)
        out.append(rep.offdiag_max > 1e-3 and fg.offdiag_max < 1e-12 and fg.blocks["det_rel_err"] < 1e-6)
    return out


def _sampler(table, rng):
    g = fixtures.hexane()
    tors = g.torsional_bonds
    fs = build_fragment_set(g, frozenset(tors[:1] + tors[2:]))
    sched = DiffusionSchedule()
    x = (g.coords - g.coords.mean(axis=0)) / 2.7
    z0, fs = phi_inverse(x, fs)
    R0 = exp_so3(rng.standard_normal((fs.m, 3)))
    z0 = type(z0)(z0.p, R0)
    model = OracleScoreModel(z0, sched, table)
    grid = karras_grid(25)
    gam = anneal_gammas(25, 0.0, 0.0)
    out = []
    for _ in range(3):
        z = sample_prior(fs.m, rng)
        z = reverse_trajectory(model, fs, None, z, grid, gam, draw_noise(rng, 24, fs.m), sched)
        out.append(np.linalg.norm(z.p - z0.p, axis=1).max() < 0.1
                   and geodesic_angle(np.swapaxes(z0.R, 1, 2) @ z.R).max() < 0.1)
    return out


def run_suites(table=None, seed=0):
    """Return [(suite name, passed, total)]."""
    rng = np.random.default_rng(seed)
    if table is None:
        table = igso3.build_table(sigma_min=0.01, sigma_max=10.0, n_sigma=64, n_omega=1024, L=1000)
    suites = [
        ("liegroup", _liegroup(rng)),
        ("igso3", _igso3(table)),
        ("fragment", _fragment()),
        ("align", _align(rng)),
        ("audit", _audit()),
        ("sampler", _sampler(table, rng)),
    ]
    return [(name, int(sum(map(bool, res))), len(res)) for name, res in suites]
