"""Reverse-time sampling on SE(3)^m.

Coordinates are handled in scaled units (x - pocket centre) / |M_b|. The
prior is a standard normal on translations and Haar on rotations; each step
moves from t_k to t_{k+1} on a Karras grid with an annealed noise factor.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import igso3
from .errors import FragdockError
from .fragment import PoseState, phi
from .liegroup import exp_so3, renormalize

DEFAULT_SCALE = 2.7


# -- grids ------------------------------------------------------------------

def karras_grid(n, t_min=0.002, t_max=1.0, rho=3.0):
    """t_k = (t_max^(1/rho) + k/(n-1) (t_min^(1/rho) - t_max^(1/rho)))^rho, k = 0..n-1."""
    if n < 2 or not 0 < t_min < t_max or rho <= 0:
        raise ValueError("need n >= 2, 0 < t_min < t_max and rho > 0")
    k = np.arange(n) / (n - 1)
    a, b = t_max ** (1 / rho), t_min ** (1 / rho)
    out = (a + k * (b - a)) ** rho
    out[0], out[-1] = t_max, t_min
    return out


def anneal_gammas(n, gamma_min=0.0, gamma_max=0.5, rho=2.0):
    """Noise factors on the same power law, gamma_max at the first (largest t) step."""
    if gamma_min < 0 or gamma_max < gamma_min:
        raise ValueError("need 0 <= gamma_min <= gamma_max")
    if gamma_max == gamma_min:
        return np.full(n, float(gamma_max))
    k = np.arange(n) / (n - 1)
    a, b = gamma_max ** (1 / rho), gamma_min ** (1 / rho)
    return np.clip((a + k * (b - a)) ** rho, gamma_min, gamma_max)


# -- scaling ----------------------------------------------------------------

def scale_coords(x, center, scale=DEFAULT_SCALE):
    return (np.asarray(x, dtype=float) - center) / scale


def unscale_coords(x, center, scale=DEFAULT_SCALE):
    return np.asarray(x, dtype=float) * scale + center


def pocket_center(pocket_xyz, rng=None, sigma_com=0.0):
    """Pocket centroid, optionally jittered by Normal(0, sigma_com^2 I)."""
    c = np.asarray(pocket_xyz, dtype=float).mean(axis=0)
    if sigma_com > 0:
        c = c + sigma_com * rng.standard_normal(3)
    return c


# -- single steps -----------------------------------------------------------

def reverse_translation_step(p, s_p, t, dt, gamma, sched, rng=None, noise=None):
    """p + dt (beta p / 2 + beta s) + gamma sqrt(dt beta) N."""
    b = sched.beta(t)
    p = np.asarray(p, dtype=float)
    out = p + dt * (0.5 * b * p + b * np.asarray(s_p))
    if gamma > 0:
        noise = rng.standard_normal(p.shape) if noise is None else noise
        out = out + gamma * np.sqrt(dt * b) * noise
    return out


def reverse_rotation_step(R, v, t, dt, gamma, sched, rng=None, noise=None):
    """R exp(hat(dt g v + gamma sqrt(dt g) N)), v the left-trivialised score."""
    g = sched.g(t)
    step = dt * g * np.asarray(v, dtype=float)
    if gamma > 0:
        noise = rng.standard_normal(step.shape) if noise is None else noise
        step = step + gamma * np.sqrt(dt * g) * noise
    return renormalize(np.asarray(R) @ exp_so3(step))


def left_trivialize(R, S):
    """Coefficient v with S = R hat(v)."""
    A = np.swapaxes(R, -1, -2) @ S
    return np.stack([A[..., 2, 1], A[..., 0, 2], A[..., 1, 0]], axis=-1)


# -- trajectories -----------------------------------------------------------

def sample_prior(m, rng):
    return PoseState(rng.standard_normal((m, 3)), igso3.sample_uniform_so3(rng, m))


def draw_noise(rng, n_steps, m):
    """Standard normal noise for every step: (trans, rot), each (n_steps, m, 3)."""
    return rng.standard_normal((n_steps, m, 3)), rng.standard_normal((n_steps, m, 3))


def reverse_trajectory(model, fs, ctx, z, grid, gammas, noise, sched, keep=False):
    """Integrate the reverse process over ``grid`` with pre-drawn noise."""
    n_trans, n_rot = noise
    path = [z] if keep else None
    for k in range(len(grid) - 1):
        t, dt, gamma = float(grid[k]), float(grid[k] - grid[k + 1]), float(gammas[k])
        s = model(z, t, fs, ctx)
        p = reverse_translation_step(z.p, s.trans, t, dt, gamma, sched, noise=n_trans[k])
        R = reverse_rotation_step(z.R, s.rot, t, dt, gamma, sched, noise=n_rot[k])
        z = PoseState(p, R)
        if keep:
            path.append(z)
    return (z, path) if keep else z


@dataclass
class SampleResult:
    seed_index: int
    coords: np.ndarray | None  # A, real atoms only
    pose: PoseState | None  # scaled units
    error: str | None
    steps: int
    final_t: float
    wall_time: float


def _run_seed(args):
    model, fs, ctx, grid, gammas, sched, seed_seq, index = args
    start = time.perf_counter()
    rng = np.random.default_rng(seed_seq)
    try:
        z = sample_prior(fs.m, rng)
        noise = draw_noise(rng, len(grid) - 1, fs.m)
        z = reverse_trajectory(model, fs, ctx, z, grid, gammas, noise, sched)
        coords = unscale_coords(phi(z, fs), ctx.center, ctx.scale)
        return SampleResult(index, coords, z, None, len(grid) - 1, float(grid[-1]),
                            time.perf_counter() - start)
    except (FragdockError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return SampleResult(index, None, None, f"{type(exc).__name__}: {exc}", 0, float("nan"),
                            time.perf_counter() - start)


def sample(model, fs, ctx, grid, gammas, sched, master_seed=0, n_seeds=1, workers=1):
    """Generate ``n_seeds`` poses; ``fs`` must carry scaled local coordinates.

    Every seed gets its own stream spawned from ``master_seed``; a numeric
    failure is recorded on that seed and the others still run.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    children = np.random.SeedSequence(master_seed).spawn(n_seeds)
    jobs = [(model, fs, ctx, grid, gammas, sched, c, i) for i, c in enumerate(children)]
    if workers > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_seed, jobs))
    return [_run_seed(j) for j in jobs]
