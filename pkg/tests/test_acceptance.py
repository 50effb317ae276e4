"""Acceptance suite: one test per criterion, each recording a pass/fail line."""

import time

import numpy as np
from scipy import stats

from fragdock import fixtures, igso3
from fragdock.align import joint_align, kabsch, rotate_torsion, torsion_specs
from fragdock.audit import fragment_gram, rank, torsional_gram
from fragdock.diffusion import forward_sample
from fragdock.fragment import (PoseState, build_fragment_set, fr3d, fragment_set_to_json,
                               law_of_cosines_angle, phi, phi_inverse, distance_mismatch, rec_merge)
from fragdock.liegroup import RigidTransform, apply, exp_so3, geodesic_angle, hat, log_so3
from fragdock.sampler import (anneal_gammas, draw_noise, karras_grid, reverse_trajectory, sample,
                              sample_prior)
from fragdock.scorehead import (N_PARAMS, DockContext, OracleScoreModel, ToyScoreModel, build_pool,
                                head_rotation_matrix, newton_euler_head, pool_loss, toy_model_train)


def random_rotations(rng, n):
    return exp_so3(rng.standard_normal((n, 3)) * 1.5)


def angle_between(u, v):
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return np.arccos(np.clip(c, -1, 1))


def three_fragment_hexane(scale=2.7):
    g = fixtures.hexane()
    tors = g.torsional_bonds
    fs = build_fragment_set(g, frozenset([tors[0], tors[2]]))
    x = (g.coords - g.coords.mean(axis=0)) / scale
    z, fs = phi_inverse(x, fs)
    return g, fs, z


def docking_complex(g, seed=1, scale=2.7):
    _, pocket = fixtures.pocket_around(g.coords, n=40, seed=seed)
    center = pocket.mean(axis=0)
    ctx = DockContext((pocket - center) / scale, center, scale)
    return ctx, (g.coords - center) / scale


# -- 1 ----------------------------------------------------------------------

def test_criterion_01_lie_group(criterion):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    u = rng.standard_normal((10_000, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = u * rng.uniform(0, np.pi - 0.01, (10_000, 1))
    roundtrip = np.abs(log_so3(exp_so3(v)) - v).max()

    R = random_rotations(rng, 100)
    w = rng.standard_normal((100, 3))
    hat_conj = np.abs(hat(np.einsum("nij,nj->ni", R, w)) - R @ hat(w) @ np.swapaxes(R, 1, 2)).max()
    exp_conj = np.abs(exp_so3(np.einsum("nij,nj->ni", R, w))
                      - R @ exp_so3(w) @ np.swapaxes(R, 1, 2)).max()
    elapsed = time.perf_counter() - start
    ok = roundtrip < 1e-9 and hat_conj < 1e-12 and exp_conj < 1e-12 and elapsed < 5
    criterion(1, "Lie-group suite", ok,
              f"roundtrip={roundtrip:.1e} conj={max(hat_conj, exp_conj):.1e} time={elapsed:.2f}s")
    assert ok


# -- 2 ----------------------------------------------------------------------

def series_log_f0(R0, R, sigma):
    omega = geodesic_angle(R0.T @ R)
    f0, _ = igso3.series_terms(omega, sigma, 2000)
    return np.log(f0[0])


def test_criterion_02_igso3(criterion):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    table = igso3.build_table()

    omega = np.linspace(0, np.pi, 2001)
    uniform_err = np.abs(igso3.density(table, omega, 10.0) - igso3.uniform_angle_density(omega)).max()

    ks = []
    for sigma in (0.1, 0.5, 1.5):
        samples = igso3.sample_angle(table, sigma, rng, 100_000)
        grid_cdf = igso3.angle_cdf(table, sigma)
        ks.append(stats.kstest(samples, lambda w: np.interp(w, table.omega_grid, grid_cdf)).statistic)

    errs = []
    for _ in range(20):
        sigma = float(np.exp(rng.uniform(np.log(0.1), np.log(2.0))))
        R0 = random_rotations(rng, 1)[0]
        Rt = igso3.sample_igso3(table, R0, sigma, rng)
        w = log_so3(R0.T @ Rt)
        v = w * igso3.score_ratio(table, np.linalg.norm(w), sigma)
        h = 1e-4
        fd = np.array([
            (series_log_f0(R0, Rt @ exp_so3(h * e), sigma)
             - series_log_f0(R0, Rt @ exp_so3(-h * e), sigma)) / (2 * h)
            for e in np.eye(3)
        ])
        errs.append(np.linalg.norm(v - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - start
    ok = uniform_err < 1e-3 and max(ks) < 0.01 and max(errs) < 1e-2 and elapsed < 60
    criterion(2, "IGSO(3) suite", ok,
              f"uniform={uniform_err:.1e} ks={max(ks):.4f} score_rel={max(errs):.1e} time={elapsed:.1f}s")
    assert ok


# -- 3 ----------------------------------------------------------------------

def test_criterion_03_rotation_weight(criterion, table):
    rng = np.random.default_rng(3)
    rel = []
    for sigma in (0.05, 0.1, 0.3, 1.0, 2.5):
        omega = igso3.sample_angle(table, sigma, rng, 100_000)
        f0, df0 = igso3.series_terms(omega, sigma, 2000)
        mc = 1.0 / np.mean((df0 / f0) ** 2)
        quad = igso3.loss_weight_rotation(table, sigma)
        rel.append(abs(quad - mc) / mc)
    ok = max(rel) < 0.02
    criterion(3, "rotational loss weight quadrature vs MC", ok, f"max_rel={max(rel):.4f}")
    assert ok


# -- 4 ----------------------------------------------------------------------

def test_criterion_04_forward_process(criterion, sched, table):
    rng = np.random.default_rng(4)
    n = 100_000
    cov_err = []
    for t in (0.1, 0.3, 0.6):
        a = sched.alpha(t)
        z0 = PoseState(np.tile([0.7, -0.3, 1.1], (n, 1)), np.tile(np.eye(3), (n, 1, 1)))
        zt = forward_sample(sched, table, z0, t, rng)
        cov = np.cov((zt.p - a * z0.p).T)
        cov_err.append(np.abs(cov - (1 - a**2) * np.eye(3)).max() / (1 - a**2))

    R0 = random_rotations(rng, 1)[0]
    z0 = PoseState(np.tile([0.7, -0.3, 1.1], (n, 1)), np.tile(R0, (n, 1, 1)))
    z1 = forward_sample(sched, table, z0, 1.0, rng)
    ks_p = max(stats.kstest(z1.p[:, c], "norm").statistic for c in range(3))
    ang = geodesic_angle(R0.T @ z1.R)
    ks_r = stats.kstest(ang, igso3.uniform_angle_cdf).statistic
    ok = max(cov_err) < 0.05 and ks_p < 0.02 and ks_r < 0.02
    criterion(4, "forward process suite", ok,
              f"cov_rel={max(cov_err):.4f} ks_trans={ks_p:.4f} ks_rot={ks_r:.4f}")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_criterion_05_oracle_end_to_end(criterion, sched, table):
    start = time.perf_counter()
    g, fs, z = three_fragment_hexane()
    rng = np.random.default_rng(5)
    z0 = PoseState(z.p, random_rotations(rng, fs.m))
    ctx = DockContext(np.zeros((1, 3)))
    grid = karras_grid(25, 0.002, 1.0, 3.0)
    gammas = np.zeros(25)
    results = sample(OracleScoreModel(z0, sched, table), fs, ctx, grid, gammas, sched,
                     master_seed=5, n_seeds=10)
    pos, ang = [], []
    for r in results:
        pos.append(np.linalg.norm(r.pose.p - z0.p, axis=1).max())
        ang.append(geodesic_angle(np.swapaxes(z0.R, 1, 2) @ r.pose.R).max())
    elapsed = time.perf_counter() - start
    hits = sum(p < 0.1 and a < 0.1 for p, a in zip(pos, ang))
    ok = fs.m == 3 and hits == 10 and elapsed < 10
    criterion(5, "oracle end-to-end recovery", ok,
              f"{hits}/10 seeds, max_pos={max(pos):.1e} max_angle={max(ang):.1e} time={elapsed:.2f}s")
    assert ok


# -- 6 ----------------------------------------------------------------------

def _head_equivariance(rng, sched, table):
    worst = 0.0
    for _ in range(100):
        n = rng.integers(3, 8)
        x = rng.standard_normal((n, 3))
        p = x.mean(axis=0)
        R = random_rotations(rng, 1)[0]
        f = rng.standard_normal((n, 3))
        t = rng.uniform(0.05, 1.0)
        Q = random_rotations(rng, 1)[0]
        shift = rng.standard_normal(3)
        s_p, v = newton_euler_head(f, x, p, R, t, sched, table)
        s_p2, v2 = newton_euler_head(f @ Q.T, x @ Q.T + shift, Q @ p + shift, Q @ R, t, sched, table)
        S, S2 = head_rotation_matrix(v, R), head_rotation_matrix(v2, Q @ R)
        worst = max(worst, np.abs(s_p2 - Q @ s_p).max(), np.abs(S2 - Q @ S).max())
    return worst


def _toy_setup(rng, sched, table):
    g = fixtures.methylhexane()
    tors = g.torsional_bonds
    fs = build_fragment_set(g, frozenset(tors))
    ctx, x = docking_complex(g)
    z0, fs = phi_inverse(x, fs)
    theta = rng.standard_normal(N_PARAMS) * 0.05
    return fs, ctx, z0, ToyScoreModel(theta, sched, table)


def _frame_twin(rng, sched, table):
    fs, ctx, _, model = _toy_setup(rng, sched, table)
    grid, gammas = karras_grid(25), anneal_gammas(25)
    Rs = random_rotations(rng, fs.m)
    fs2 = fs.rotated_frames(Rs)
    z = sample_prior(fs.m, rng)
    z2 = PoseState(z.p, z.R @ np.swapaxes(Rs, 1, 2))
    nt, nr = draw_noise(rng, 24, fs.m)
    nr2 = np.einsum("mij,kmj->kmi", Rs, nr)
    _, path = reverse_trajectory(model, fs, ctx, z, grid, gammas, (nt, nr), sched, keep=True)
    _, path2 = reverse_trajectory(model, fs2, ctx, z2, grid, gammas, (nt, nr2), sched, keep=True)
    return max(np.abs(phi(a, fs) - phi(b, fs2)).max() for a, b in zip(path, path2))


def _pocket_twin(rng, sched, table):
    fs, ctx, z0, model = _toy_setup(rng, sched, table)
    grid, gammas = karras_grid(25), anneal_gammas(25)
    Q = random_rotations(rng, 1)[0]
    z = sample_prior(fs.m, rng)
    nt, nr = draw_noise(rng, 24, fs.m)
    worst = 0.0
    for m, m2 in ((model, model),
                  (OracleScoreModel(z0, sched, table), OracleScoreModel(z0.rotate(Q), sched, table))):
        out = reverse_trajectory(m, fs, ctx, z, grid, gammas, (nt, nr), sched)
        out2 = reverse_trajectory(m2, fs, ctx.rotated(Q), z.rotate(Q), grid, gammas,
                                  (nt @ Q.T, nr), sched)
        worst = max(worst, np.abs(phi(out2, fs) - phi(out, fs) @ Q.T).max())
    return worst


def test_criterion_06_equivariance(criterion, sched, table):
    rng = np.random.default_rng(6)
    head = _head_equivariance(rng, sched, table)
    frame = _frame_twin(rng, sched, table)
    pocket = _pocket_twin(rng, sched, table)
    ok = head < 1e-10 and frame < 1e-9 and pocket < 1e-8
    criterion(6, "head equivariance and twin runs", ok,
              f"head={head:.1e} frame_twin={frame:.1e} pocket_twin={pocket:.1e}")
    assert ok


# -- 7 ----------------------------------------------------------------------

def test_criterion_07_gram_structure(criterion):
    rows = []
    ok = True
    for g in (fixtures.pentane(), fixtures.methylhexane(), fixtures.dimethylheptane()):
        tg = torsional_gram(g, g.coords, torsion_specs(g))
        fs = build_fragment_set(g, frozenset(g.torsional_bonds))
        z, fs = phi_inverse(g.coords, fs)
        fg = fragment_gram(fs, z)
        b = tg.blocks
        ok &= (b["torsion_torsion_max"] > 1e-3 and b["torsion_translation_max"] > 1e-3
               and b["torsion_rotation_max"] > 1e-3 and fg.blocks["cross_block_max"] < 1e-12
               and fg.blocks["det_rel_err"] < 1e-6)
        rows.append(f"{g.name}:tt={b['torsion_torsion_max']:.2f},frag={fg.blocks['cross_block_max']:.0e}")
    criterion(7, "torsional vs fragment Gram", ok, " ".join(rows))
    assert ok


# -- 8 ----------------------------------------------------------------------

def _free_dummy_count(g, cuts):
    merged_ends = {x for k in g.torsional_bonds if k not in cuts for x in g.bonds[k][:2]}
    return sum((a not in merged_ends) + (b not in merged_ends)
               for k, (a, b, _) in enumerate(g.bonds) if k in cuts)


def test_criterion_08_fr3d(criterion):
    invariants = True
    for g in fixtures.all_fixtures():
        k = len(g.torsional_bonds)
        for seed in range(5):
            fs = fr3d(g, seed=seed)
            atoms = sorted(a for f in fs.fragments for a in f.atoms)
            n_free = sum(len(f.free_dummies) for f in fs.fragments)
            n_all = sum(len(f.dummies) for f in fs.fragments)
            invariants &= (fs.m <= k + 1 and atoms == list(range(g.n_atoms))
                           and n_all == 2 * len(fs.cuts) and n_free == _free_dummy_count(g, fs.cuts))
            again = fragment_set_to_json(fr3d(g, seed=seed))
            invariants &= again == fragment_set_to_json(fs)

    corpus = fixtures.chain_corpus()
    m_mean = np.mean([np.mean([fr3d(g, seed=s).m for s in range(10)]) for g in corpus])
    k1_mean = np.mean([len(g.torsional_bonds) + 1 for g in corpus])
    ratio = m_mean / k1_mean
    ok = invariants and len(corpus) >= 20 and ratio <= 0.5
    criterion(8, "FR3D suite", ok,
              f"invariants={'ok' if invariants else 'broken'} corpus={len(corpus)} "
              f"mean_m/mean_(k+1)={ratio:.3f} (need <= 0.5)")
    assert invariants
    assert ratio <= 0.5, f"fragment reduction ratio {ratio:.3f} exceeds 0.5"


# -- 9 ----------------------------------------------------------------------

def _triangle_angles(g, fs, x):
    """For every triangulation edge, (angle from side lengths, angle from vectors)."""
    out = []
    for i, j, d in fs.edges:
        (B,) = set(g.neighbors(i)) & set(g.neighbors(j))
        a, b = np.linalg.norm(x[i] - x[B]), np.linalg.norm(x[j] - x[B])
        out.append((law_of_cosines_angle(a, b, d), angle_between(x[i] - x[B], x[j] - x[B])))
    return np.array(out)


def test_criterion_09_triangulation(criterion):
    rng = np.random.default_rng(9)
    recover, held, dist = 0.0, 0.0, 0.0
    bent_changes = True
    for g in fixtures.all_fixtures():
        if not g.torsional_bonds:
            continue
        fs = build_fragment_set(g, frozenset(g.torsional_bonds))
        ang = _triangle_angles(g, fs, g.coords)
        recover = max(recover, np.abs(ang[:, 0] - ang[:, 1]).max())
        x = g.coords
        for spec in torsion_specs(g):
            x = rotate_torsion(x, spec, rng.uniform(-np.pi, np.pi))
        dist = max(dist, np.abs(distance_mismatch(x, fs)).max())
        rot = _triangle_angles(g, fs, x)
        held = max(held, np.abs(rot[:, 1] - ang[:, 1]).max(), np.abs(rot[:, 0] - rot[:, 1]).max())
        # bending one angle breaks the held distance, so the recovered angle no longer matches
        i, j, d = fs.edges[0]
        (B,) = set(g.neighbors(i)) & set(g.neighbors(j))
        y = g.coords.copy()
        axis = np.cross(y[i] - y[B], y[j] - y[B])
        y[i] = y[B] + exp_so3(0.2 * axis / np.linalg.norm(axis)) @ (y[i] - y[B])
        bent = law_of_cosines_angle(np.linalg.norm(y[i] - y[B]), np.linalg.norm(y[j] - y[B]), d)
        bent_changes &= abs(bent - angle_between(y[i] - y[B], y[j] - y[B])) > 0.1
    ok = recover < 1e-9 and held < 1e-9 and dist < 1e-9 and bent_changes
    criterion(9, "law-of-cosines triangulation", ok,
              f"recover={recover:.1e} held={held:.1e} dist={dist:.1e}")
    assert ok


# -- 10 ---------------------------------------------------------------------

def test_criterion_10_alignment(criterion):
    rng = np.random.default_rng(10)
    kabsch_err = 0.0
    for _ in range(50):
        P = rng.standard_normal((12, 3))
        T = RigidTransform(rng.standard_normal(3), random_rotations(rng, 1)[0])
        est = kabsch(P, apply(T, P))
        kabsch_err = max(kabsch_err, np.abs(est.R - T.R).max(), np.abs(est.p - T.p).max())

    results, monotone = [], True
    for g in fixtures.chain_corpus():
        specs = torsion_specs(g)
        x = g.coords
        for s in specs:
            x = rotate_torsion(x, s, rng.uniform(-np.pi, np.pi))
        target = apply(RigidTransform(rng.standard_normal(3) * 3, random_rotations(rng, 1)[0]), x)
        _, r, hist = joint_align(g.coords, target, specs)
        results.append(r)
        monotone &= bool(np.all(np.diff(hist) <= 1e-12))
    hits = sum(r < 0.05 for r in results)
    ok = kabsch_err < 1e-10 and hits == len(results) == 20 and monotone
    criterion(10, "alignment suite", ok,
              f"kabsch={kabsch_err:.1e} {hits}/{len(results)} max_rmsd={max(results):.1e} monotone={monotone}")
    assert ok


# -- 11 ---------------------------------------------------------------------

def test_criterion_11_toy_training(criterion, sched, table):
    start = time.perf_counter()
    g = fixtures.butane()
    fs = build_fragment_set(g, rec_merge(g)[0])
    ctx, x = docking_complex(g, seed=1)
    z0, fs = phi_inverse(x, fs)
    data = [(fs, ctx, z0)]

    rng = np.random.default_rng(0)
    pool = build_pool(data, sched, table, rng, n_samples=16)
    theta = rng.standard_normal(N_PARAMS) * 0.01
    _, grad = pool_loss(theta, pool, table)
    h, grad_err = 1e-6, 0.0
    for i in rng.choice(N_PARAMS, 12, replace=False):
        e = np.zeros(N_PARAMS)
        e[i] = h
        fd = (pool_loss(theta + e, pool, table, False) - pool_loss(theta - e, pool, table, False)) / (2 * h)
        grad_err = max(grad_err, abs(grad[i] - fd) / max(abs(fd), 1e-8))

    _, hist = toy_model_train(data, sched, table, steps=2000, lr=1e-2, rng=np.random.default_rng(0))
    elapsed = time.perf_counter() - start
    ratio = hist[-1] / hist[0]
    ok = fs.m == 2 and ratio < 0.2 and grad_err < 1e-4 and elapsed < 120
    criterion(11, "toy model training", ok,
              f"loss_ratio={ratio:.3f} grad_rel={grad_err:.1e} time={elapsed:.1f}s")
    assert ok


# -- 12 ---------------------------------------------------------------------

def test_criterion_12_ranking(criterion):
    x = np.zeros((1, 3))
    s1 = rank([(x, -8.0, 1.0)])[0].score
    s0 = rank([(x, -3.0, 0.0)])[0].score
    order = [r.index for r in rank([(x, -5.0, 1.0), (x, -10.0, 0.5)], beta=4)]
    rng = np.random.default_rng(12)
    samples = [(x, b, p) for b, p in zip(rng.uniform(-20, 5, 30), rng.uniform(0, 1, 30))]
    base = [r.index for r in rank(samples)]
    scaled = [r.index for r in rank([(c, 3.7 * b, p) for c, b, p in samples])]
    ok = s1 == 8.0 and s0 == 0.0 and order == [0, 1] and base == scaled
    criterion(12, "mixed-score ranking", ok, f"s(-8,1)={s1} s(b,0)={s0} order={order}")
    assert ok
