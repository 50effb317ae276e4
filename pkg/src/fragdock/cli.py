"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, igso3
from .align import joint_align, rmsd, superpose, torsion_specs
from .audit import fragment_gram, pose_checks, pseudo_energy, rank, torsional_gram
from .config import load_config, metadata
from .diffusion import DiffusionSchedule
from .errors import FragdockError, InputError, NumericError
from .fragment import fr3d, fragment_set_to_json, phi_inverse, pose_to_json
from .molio import load_json, parse_sdf, pocket_from_json, write_sdf
from .sampler import anneal_gammas, karras_grid, pocket_center, sample, scale_coords
from .scorehead import DockContext, OracleScoreModel, ToyScoreModel, toy_model_train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- helpers ----------------------------------------------------------------

def _read_text(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _read_ligand(path):
    g = parse_sdf(_read_text(path))
    if g.coords is None:
        raise InputError(f"{path}: ligand has no coordinates")
    return g


def _read_pocket(path):
    _read_text(path)  # missing file -> input error
    return pocket_from_json(load_json(path))


def _overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    over = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "n_seeds", None) is not None:
        over["n_seeds"] = args.n_seeds
    return load_config(getattr(args, "config", None), over)


def _table(cfg, args):
    return igso3.cached_table(cache_dir=getattr(args, "cache_dir", None), **cfg.table_params())


def _schedule(cfg):
    return DiffusionSchedule(cfg.beta_min, cfg.beta_max, cfg.sigma_min, cfg.sigma_max)


def _dump_json(doc, path):
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _stamp(cfg):
    return [cfg.hash(), cfg.seed, __version__]


STAMP_COLS = ["config_hash", "master_seed", "version"]


def _docking_setup(g, pocket_xyz, cfg):
    """Fragment set in scaled units, docking context and the input pose."""
    fs = fr3d(g, seed=cfg.seed, mode=cfg.fr3d_mode)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    center = pocket_center(pocket_xyz, rng, cfg.sigma_com)
    ctx = DockContext(scale_coords(pocket_xyz, center, cfg.scale), center, cfg.scale)
    z0, fs = phi_inverse(scale_coords(g.coords, center, cfg.scale), fs)
    return fs, ctx, z0


# -- commands ---------------------------------------------------------------

def cmd_fragment(args):
    cfg = _config(args)
    g = _read_ligand(args.ligand)
    fs = fr3d(g, seed=cfg.seed, mode=cfg.fr3d_mode)
    _dump_json(fragment_set_to_json(fs, meta=metadata(cfg)), args.out)
    return 0


def cmd_align(args):
    cfg = _config(args)
    conf, target = _read_ligand(args.conformer), _read_ligand(args.target)
    if conf.symbols != target.symbols or conf.bonds != target.bonds:
        raise InputError("conformer and target are different molecules")
    specs = torsion_specs(conf)
    _, before = superpose(conf.coords, target.coords)
    aligned, after, history = joint_align(conf.coords, target.coords, specs,
                                          max_rounds=args.max_rounds)
    Path(args.out).write_text(write_sdf(conf, aligned, name=f"{conf.name} aligned config={cfg.hash()}"))
    _write_csv(args.report, ["conformer", "target", "n_torsions", "rmsd_rigid", "rmsd_final",
                             "rounds"] + STAMP_COLS,
               [[args.conformer, args.target, len(specs), f"{before:.6f}", f"{after:.6f}",
                 len(history) - 1] + _stamp(cfg)])
    print(f"rmsd {before:.4f} -> {after:.4f} A")
    return 0


def _model(args, cfg, sched, table, z0):
    if args.model == "oracle":
        return OracleScoreModel(z0, sched, table)
    if not args.weights:
        raise UsageError("--model toy needs --weights")
    _read_text(args.weights)
    return ToyScoreModel.from_json(load_json(args.weights), sched, table)


def cmd_sample(args):
    cfg = _config(args)
    g = _read_ligand(args.ligand)
    _, pocket_xyz = _read_pocket(args.pocket)
    sched = _schedule(cfg)
    table = _table(cfg, args)
    fs, ctx, z0 = _docking_setup(g, pocket_xyz, cfg)
    model = _model(args, cfg, sched, table, z0)
    grid = karras_grid(cfg.n_steps, cfg.t_min, cfg.t_max, cfg.rho)
    gammas = anneal_gammas(cfg.n_steps, cfg.gamma_min, cfg.gamma_max, cfg.rho_gamma)
    workers = args.workers or os.cpu_count() or 1
    results = sample(model, fs, ctx, grid, gammas, sched, cfg.seed, cfg.n_seeds, workers)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = metadata(cfg, model=args.model, cuts=sorted(fs.cuts))
    sdf, rows = [], []
    for r in results:
        doc = {"meta": meta, "seed_index": r.seed_index, "error": r.error,
               "coords": None if r.coords is None else np.round(r.coords, 6).tolist()}
        if r.pose is not None:
            doc.update(pose_to_json(r.pose))
        else:
            doc["kind"] = "pose"
        _dump_json(doc, out / f"pose_{r.seed_index:03d}.json")
        if r.coords is not None:
            sdf.append(write_sdf(g, r.coords, name=f"{g.name} seed={r.seed_index} config={cfg.hash()}"))
        rows.append([r.seed_index, "ok" if r.error is None else "failed", r.final_t, r.steps,
                     f"{r.wall_time:.4f}", r.error or ""] + _stamp(cfg))
    (out / "poses.sdf").write_text("".join(sdf))
    _write_csv(out / "diagnostics.csv",
               ["seed_index", "status", "final_t", "steps", "wall_time_s", "error"] + STAMP_COLS, rows)
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"seed {r.seed_index}: {r.error}", file=sys.stderr)
    print(f"{len(results) - len(failed)}/{len(results)} seeds written to {out}")
    if len(failed) == len(results):
        raise _AllSeedsFailed(failed[0].error)
    return 0


class _AllSeedsFailed(NumericError):
    pass


def cmd_train_toy(args):
    cfg = _config(args)
    g = _read_ligand(args.ligand)
    _, pocket_xyz = _read_pocket(args.pocket)
    sched = _schedule(cfg)
    table = _table(cfg, args)
    fs, ctx, z0 = _docking_setup(g, pocket_xyz, cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    model, hist = toy_model_train([(fs, ctx, z0)], sched, table, steps=args.steps, lr=args.lr,
                                  rng=rng)
    doc = model.to_json()
    doc["meta"] = metadata(cfg, cuts=sorted(fs.cuts))
    doc["loss_initial"], doc["loss_final"] = float(hist[0]), float(hist[-1])
    _dump_json(doc, args.out)
    print(f"loss {hist[0]:.4g} -> {hist[-1]:.4g} ({hist[-1] / hist[0]:.3f} of initial)",
          file=sys.stderr)
    return 0


def cmd_audit_gram(args):
    cfg = _config(args)
    g = _read_ligand(args.ligand)
    tg = torsional_gram(g, g.coords, torsion_specs(g))
    fs = fr3d(g, seed=cfg.seed, mode=cfg.fr3d_mode)
    z, fs = phi_inverse(g.coords, fs)
    fg = fragment_gram(fs, z)
    reports = [tg, fg]
    doc = {"schema_version": 1, "kind": "gram_report", "meta": metadata(cfg, cuts=sorted(fs.cuts)),
           "reports": [dict(r.summary(), gram=r.gram.tolist()) for r in reports]}
    _dump_json(doc, args.json)
    keys = ["label", "size", "offdiag_max"]
    extra = sorted({k for r in reports for k in r.summary()} - set(keys))
    _write_csv(args.csv, keys + extra + STAMP_COLS,
               [[r.summary().get(k, "") for k in keys + extra] + _stamp(cfg) for r in reports])
    return 0


def cmd_rank(args):
    cfg = _config(args)
    g = _read_ligand(args.ligand)
    _, pocket_xyz = _read_pocket(args.pocket)
    samples, names = [], []
    for path in args.poses:
        _read_text(path)
        doc = load_json(path)
        if not isinstance(doc, dict) or doc.get("coords") is None:
            print(f"skipping {path}: no coordinates", file=sys.stderr)
            continue
        x = np.asarray(doc["coords"], dtype=float)
        if x.shape != (g.n_atoms, 3):
            raise InputError(f"{path}: expected {g.n_atoms} atoms")
        p, _ = pose_checks(x, g, g.coords, pocket_xyz)
        samples.append((x, pseudo_energy(x, pocket_xyz), p))
        names.append(path)
    ranked = rank(samples, cfg.rank_beta)
    rows = [[i + 1, names[r.index], f"{r.energy:.6f}", f"{r.check_fraction:.4f}", f"{r.score:.6f}",
             f"{rmsd(r.coords, g.coords):.4f}"] + _stamp(cfg) for i, r in enumerate(ranked)]
    _write_csv(args.out, ["rank", "pose", "energy", "check_fraction", "score", "rmsd_to_input"]
               + STAMP_COLS, rows)
    return 0


def cmd_verify(args):
    from .verify import run_suites

    cfg = _config(args)
    results = run_suites(seed=cfg.seed)
    ok = True
    for name, passed, total in results:
        print(f"{name:10s} {passed}/{total}")
        ok &= passed == total
    print("all suites passed" if ok else "FAILURES")
    return 0 if ok else 3


# -- parser -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="fragdock", description="Fragment-based SE(3) diffusion docking toolkit.")
    p.add_argument("--version", action="version", version=f"fragdock {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        return sp

    sp = common(sub.add_parser("fragment", help="sample a fragmentation and write FragmentSet JSON"))
    sp.add_argument("ligand")
    sp.add_argument("-o", "--out", default="-")
    sp.set_defaults(func=cmd_fragment)

    sp = common(sub.add_parser("align", help="fit a conformer onto a target pose"))
    sp.add_argument("conformer")
    sp.add_argument("target")
    sp.add_argument("-o", "--out", required=True, help="aligned SDF")
    sp.add_argument("--report", required=True, help="CSV row with RMSD")
    sp.add_argument("--max-rounds", type=int, default=50)
    sp.set_defaults(func=cmd_align)

    sp = common(sub.add_parser("sample", help="reverse-diffusion sampling of poses"))
    sp.add_argument("ligand")
    sp.add_argument("pocket")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--model", choices=["oracle", "toy"], default="oracle")
    sp.add_argument("--weights", help="toy model JSON")
    sp.add_argument("--n-seeds", type=int)
    sp.add_argument("--workers", type=int, default=0, help="worker processes (default: all cores)")
    sp.add_argument("--cache-dir", help="directory for the IGSO(3) table cache")
    sp.set_defaults(func=cmd_sample)

    sp = common(sub.add_parser("train-toy", help="overfit the toy score model on one complex"))
    sp.add_argument("ligand")
    sp.add_argument("pocket")
    sp.add_argument("-o", "--out", required=True)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--cache-dir")
    sp.set_defaults(func=cmd_train_toy)

    sp = common(sub.add_parser("audit-gram", help="torsional vs fragment Gram matrices"))
    sp.add_argument("ligand")
    sp.add_argument("--json", required=True)
    sp.add_argument("--csv", required=True)
    sp.set_defaults(func=cmd_audit_gram)

    sp = common(sub.add_parser("rank", help="rank pose JSONs by the mixed score"))
    sp.add_argument("poses", nargs="+")
    sp.add_argument("--ligand", required=True, help="reference ligand SDF")
    sp.add_argument("--pocket", required=True)
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(func=cmd_rank)

    sp = common(sub.add_parser("verify", help="run the invariant suites on bundled fixtures"))
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a command is required")
        return args.func(args)
    except UsageError as exc:
        print(f"fragdock: usage error: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"fragdock: input error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"fragdock: numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    except FragdockError as exc:
        print(f"fragdock: error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
