"""Isotropic Gaussian on SO(3) from a truncated heat-kernel series.

The angle marginal is

    f(w, s) = (1 - cos w)/pi * sum_l (2l+1) exp(-l(l+1) s^2/2) sin((l+1/2) w)/sin(w/2)

and ``f0 = f / p_uniform`` is the density with respect to Haar measure. All
per-sigma quantities are tabulated once on an (omega, log sigma) grid and
bilinearly interpolated afterwards.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import OutOfRange, TruncationInsufficient
from .liegroup import exp_so3

CACHE_VERSION = 1
# below this angle the ratio (d f0/d w) / (w f0) is taken from its series limit
RATIO_SMALL_OMEGA = 1e-3
# relative density level under which the truncated series is pure round-off
_DEAD_LEVEL = 1e-12


def series_terms(omega, sigma, L):
    """Return (f0, d f0 / d omega) of the truncated series at the given angles."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    l = np.arange(L, dtype=float)
    w = (2 * l + 1) * np.exp(-l * (l + 1) * sigma**2 / 2)
    # trailing weights that underflow to exactly zero add nothing
    L = int(np.flatnonzero(w)[-1]) + 1
    w, l = w[:L], l[:L]
    half = l[:, None] + 0.5
    f0 = np.empty(omega.shape)
    df0 = np.empty(omega.shape)
    flat, f_out, d_out = omega.ravel(), f0.ravel(), df0.ravel()
    chunk = max(1, 2**22 // L)  # bound the (L, chunk) work arrays
    for s in range(0, flat.size, chunk):
        om = flat[s:s + chunk]
        sn = np.sin(half * om)
        lo = np.sin(om / 2)
        f_out[s:s + chunk] = w @ (sn / lo)
        d_out[s:s + chunk] = w @ ((half * np.cos(half * om) * lo - sn * 0.5 * np.cos(om / 2)) / lo**2)
    return f0, df0


def series_density(omega, sigma, L=2000):
    """Angle marginal f(omega, sigma) straight from the series (oracle path)."""
    f0, _ = series_terms(omega, sigma, L)
    return (1 - np.cos(omega)) / np.pi * f0


def uniform_angle_density(omega):
    return (1 - np.cos(omega)) / np.pi


def uniform_angle_cdf(omega):
    return (omega - np.sin(omega)) / np.pi


@dataclass(frozen=True)
class IGSO3Table:
    sigma_grid: np.ndarray
    omega_grid: np.ndarray  # includes omega = 0 as column 0
    density: np.ndarray
    cdf: np.ndarray
    score_coeff: np.ndarray
    ratio: np.ndarray  # score_coeff / omega, column 0 holds the omega -> 0 limit
    expected_sq_score: np.ndarray
    L: int
    params: dict = field(default_factory=dict)

    @property
    def log_sigma(self):
        return np.log(self.sigma_grid)

    def _sigma_weights(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        lo, hi = self.sigma_grid[0], self.sigma_grid[-1]
        if np.any(sigma < lo * (1 - 1e-12)) or np.any(sigma > hi * (1 + 1e-12)):
            raise OutOfRange(f"sigma outside table range [{lo}, {hi}]")
        x = (np.log(np.clip(sigma, lo, hi)) - np.log(lo)) / (np.log(hi) - np.log(lo))
        x = x * (len(self.sigma_grid) - 1)
        i0 = np.clip(np.floor(x).astype(int), 0, len(self.sigma_grid) - 2)
        return i0, x - i0

    def _omega_weights(self, omega):
        dw = self.omega_grid[1] - self.omega_grid[0]
        x = np.clip(omega, 0.0, np.pi) / dw
        j0 = np.clip(np.floor(x).astype(int), 0, len(self.omega_grid) - 2)
        return j0, x - j0

    def _bilinear(self, values, omega, sigma):
        omega, sigma = np.broadcast_arrays(np.asarray(omega, float), np.asarray(sigma, float))
        i0, ws = self._sigma_weights(sigma)
        j0, wo = self._omega_weights(omega)
        a = values[i0, j0] * (1 - wo) + values[i0, j0 + 1] * wo
        b = values[i0 + 1, j0] * (1 - wo) + values[i0 + 1, j0 + 1] * wo
        return a * (1 - ws) + b * ws


def build_table(sigma_min=0.01, sigma_max=10.0, n_sigma=256, n_omega=2048, L=2000):
    if not 0 < sigma_min < sigma_max:
        raise ValueError("need 0 < sigma_min < sigma_max")
    if n_omega < 512:
        raise ValueError("n_omega must be >= 512")
    sigma_grid = np.geomspace(sigma_min, sigma_max, n_sigma)
    omega = np.linspace(0, np.pi, n_omega + 1)[1:]

    l = np.arange(L, dtype=float)
    half = l[:, None] + 0.5
    lo = np.sin(omega / 2)
    dlo = 0.5 * np.cos(omega / 2)
    sn = np.sin(half * omega)
    basis = sn / lo
    dbasis = (half * np.cos(half * omega) * lo - sn * dlo) / lo**2
    del sn

    weights = (2 * l + 1) * np.exp(-l[None, :] * (l[None, :] + 1) * sigma_grid[:, None] ** 2 / 2)
    f0 = weights @ basis
    df0 = weights @ dbasis
    p_unif = uniform_angle_density(omega)
    density = f0 * p_unif

    if np.any(density < -1e-6):
        raise TruncationInsufficient(
            f"negative mass {density.min():.3g}; increase L for sigma={sigma_min}"
        )

    # omega -> 0: f0 ~ sum w_l (2l+1)(1 - w^2 l(l+1)/6)
    f0_zero = weights @ (2 * l + 1)
    limit = -(weights @ ((2 * l + 1) * l * (l + 1))) / (3 * f0_zero)

    peak = np.max(np.abs(density), axis=1, keepdims=True)
    dead = density < _DEAD_LEVEL * peak
    with np.errstate(divide="ignore", invalid="ignore"):
        coeff = df0 / f0
    # Past the numerically resolvable tail the series ratio is round-off;
    # continue it with the Gaussian tail slope so the table stays finite.
    tail = -omega[None, :] / sigma_grid[:, None] ** 2
    coeff = np.where(dead | ~np.isfinite(coeff), tail, coeff)
    density = np.where(dead, 0.0, np.maximum(density, 0.0))

    grid = np.concatenate([[0.0], omega])
    density = np.concatenate([np.zeros((n_sigma, 1)), density], axis=1)
    coeff = np.concatenate([np.zeros((n_sigma, 1)), coeff], axis=1)
    ratio = np.concatenate([limit[:, None], coeff[:, 1:] / omega[None, :]], axis=1)

    cdf = np.concatenate(
        [np.zeros((n_sigma, 1)),
         np.cumsum((density[:, 1:] + density[:, :-1]) / 2 * np.diff(grid), axis=1)],
        axis=1,
    )
    mass = cdf[:, -1:].copy()
    cdf = cdf / mass

    integrand = density * coeff**2
    num = np.trapezoid(integrand, grid, axis=1)
    den = np.trapezoid(density, grid, axis=1)
    expected_sq = num / den

    params = dict(sigma_min=sigma_min, sigma_max=sigma_max, n_sigma=n_sigma,
                  n_omega=n_omega, L=L)
    return IGSO3Table(sigma_grid, grid, density, cdf, coeff, ratio, expected_sq, L, params)


def density(table, omega, sigma):
    return table._bilinear(table.density, omega, sigma)


def score_coeff(table, omega, sigma):
    """Interpolated (d f0 / d omega) / f0."""
    return table._bilinear(table.score_coeff, omega, sigma)


def score_ratio(table, omega, sigma):
    """(d f0 / d omega) / (omega f0), using the series limit for omega < 1e-3."""
    omega = np.asarray(omega, dtype=float)
    limit = table._bilinear(table.ratio, np.zeros_like(omega), sigma)
    interp = table._bilinear(table.ratio, omega, sigma)
    return np.where(omega < RATIO_SMALL_OMEGA, limit, interp)


def score_ratio_slope(table, omega, sigma):
    """d/d omega of :func:`score_ratio`, exact for the piecewise-linear lookup."""
    omega, sigma = np.broadcast_arrays(np.asarray(omega, float), np.asarray(sigma, float))
    dw = table.omega_grid[1] - table.omega_grid[0]
    j0, _ = table._omega_weights(omega)
    i0, ws = table._sigma_weights(sigma)
    r = table.ratio
    slope = ((r[i0, j0 + 1] - r[i0, j0]) * (1 - ws) + (r[i0 + 1, j0 + 1] - r[i0 + 1, j0]) * ws) / dw
    # the lookup is constant below the cutoff and clamped beyond pi
    return np.where((omega < RATIO_SMALL_OMEGA) | (omega >= np.pi), 0.0, slope)


def angle_cdf(table, sigma):
    """CDF row at ``sigma`` (log-sigma blend of neighbouring rows)."""
    i0, ws = table._sigma_weights(sigma)
    return table.cdf[i0] * (1 - ws) + table.cdf[i0 + 1] * ws


def sample_angle(table, sigma, rng, size=None):
    """Inverse-transform sample of the rotation angle."""
    cdf = angle_cdf(table, sigma)
    u = rng.random(size)
    return np.interp(u, cdf, table.omega_grid)


def random_axis(rng, size=None):
    shape = (3,) if size is None else (size, 3) if np.isscalar(size) else tuple(size) + (3,)
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_igso3(table, R0, sigma, rng, size=None):
    """Draw ``exp([w u]_x) @ R0`` with w ~ f(., sigma) and u uniform on S^2."""
    omega = sample_angle(table, sigma, rng, size)
    u = random_axis(rng, size)
    return exp_so3(np.asarray(omega)[..., None] * u) @ np.asarray(R0, dtype=float)


_UNIF_GRID = np.linspace(0.0, np.pi, 4097)
_UNIF_CDF = uniform_angle_cdf(_UNIF_GRID)


def sample_uniform_angle(rng, size=None):
    u = rng.random(size)
    w = np.interp(u, _UNIF_CDF, _UNIF_GRID)
    # Newton polish on F(w) = (w - sin w)/pi
    for _ in range(3):
        dens = uniform_angle_density(w)
        step = np.where(dens > 1e-12, (uniform_angle_cdf(w) - u) / np.maximum(dens, 1e-12), 0.0)
        w = np.clip(w - step, 0.0, np.pi)
    return w


def sample_uniform_so3(rng, size=None):
    """Haar rotation via angle density (1 - cos w)/pi and a uniform axis."""
    omega = sample_uniform_angle(rng, size)
    u = random_axis(rng, size)
    return exp_so3(np.asarray(omega)[..., None] * u)


def expected_sq_score(table, sigma):
    i0, ws = table._sigma_weights(sigma)
    lv = np.log(table.expected_sq_score)
    return np.exp(lv[i0] * (1 - ws) + lv[i0 + 1] * ws)


def loss_weight_rotation(table, sigma, c_r=1.0):
    return c_r / expected_sq_score(table, sigma)


def loss_weight_translation(alpha_t, c_p=1.0):
    return c_p * (1.0 - np.asarray(alpha_t) ** 2)


# -- on-disk cache ----------------------------------------------------------

def _params_key(params):
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:16]


def save_table(table, path):
    header = json.dumps({"version": CACHE_VERSION, "params": table.params})
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.frombuffer(header.encode(), dtype=np.uint8),
            sigma_grid=table.sigma_grid, omega_grid=table.omega_grid,
            density=table.density, cdf=table.cdf, score_coeff=table.score_coeff,
            ratio=table.ratio, expected_sq_score=table.expected_sq_score,
        )


def load_table(path, params=None):
    """Load a cached table; returns None when the header does not match."""
    try:
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != CACHE_VERSION:
                return None
            if params is not None and header["params"] != params:
                return None
            p = header["params"]
            return IGSO3Table(
                data["sigma_grid"], data["omega_grid"], data["density"], data["cdf"],
                data["score_coeff"], data["ratio"], data["expected_sq_score"], p["L"], p,
            )
    except (OSError, KeyError, ValueError):
        return None


def cached_table(cache_dir=None, **kwargs):
    """Build a table, reusing ``$FRAGDOCK_CACHE`` (or ``cache_dir``) when set."""
    params = dict(sigma_min=0.01, sigma_max=10.0, n_sigma=256, n_omega=2048, L=2000)
    params.update(kwargs)
    cache_dir = cache_dir or os.environ.get("FRAGDOCK_CACHE")
    if cache_dir:
        path = Path(cache_dir) / f"igso3_{_params_key(params)}.npz"
        table = load_table(path, params)
        if table is not None:
            return table
        table = build_table(**params)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_table(table, path)
        return table
    return build_table(**params)
