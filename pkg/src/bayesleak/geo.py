"""Location-privacy mechanisms on planar grids.

Locations are handled in meters on a local equirectangular projection
around the grid center (x east, y north).  A grid of ``n x n`` square cells
is centered on that origin; cell ``i`` covers column ``i % n`` (west to
east) and row ``i // n`` (south to north).

Three mechanisms map a secret input cell to an output location:

* planar geometric: discrete output cells, ``C[s, o]`` proportional to
  ``exp(-beta * d(s, o))``;
* planar Laplacian: the same density over the continuous output square;
* Blahut-Arimoto: the rate-distortion optimal channel for distortion
  ``d`` at inverse temperature ``beta``.

For all three, ``beta = ln(nu) / 100`` per meter.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .core import Dataset, System

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371008.8
GOWALLA_CENTER = (37.755, -122.440)


@dataclass(frozen=True)
class Grid:
    """Square grid of ``n_cells x n_cells`` cells of side `cell_size` meters,
    centered on `center` (lat, lon in degrees)."""

    center: Tuple[float, float]
    cell_size: float
    n_cells: int

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError("a grid needs at least one cell per side")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @property
    def half_width(self) -> float:
        return self.n_cells * self.cell_size / 2.0

    @property
    def size(self) -> int:
        return self.n_cells * self.n_cells

    def to_planar(self, lat, lon) -> np.ndarray:
        """Degrees to meters relative to the grid center; shape (n, 2)."""
        lat0, lon0 = (math.radians(v) for v in self.center)
        lat = np.radians(np.asarray(lat, dtype=float))
        lon = np.radians(np.asarray(lon, dtype=float))
        x = EARTH_RADIUS_M * (lon - lon0) * math.cos(lat0)
        y = EARTH_RADIUS_M * (lat - lat0)
        return np.stack([np.atleast_1d(x), np.atleast_1d(y)], axis=1)

    def to_latlon(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        lat0, lon0 = (math.radians(v) for v in self.center)
        lat = lat0 + xy[:, 1] / EARTH_RADIUS_M
        lon = lon0 + xy[:, 0] / (EARTH_RADIUS_M * math.cos(lat0))
        return np.degrees(np.stack([lat, lon], axis=1))

    def cell_of(self, xy) -> np.ndarray:
        """Cell index of each planar point, -1 outside the grid."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        ij = np.floor((xy + self.half_width) / self.cell_size)
        inside = np.all((ij >= 0) & (ij < self.n_cells), axis=1)
        ij = ij.astype(np.int64)
        return np.where(inside, ij[:, 1] * self.n_cells + ij[:, 0], -1)

    def centers(self, cells=None) -> np.ndarray:
        """Planar centers of `cells` (all cells by default); shape (m, 2)."""
        if cells is None:
            cells = np.arange(self.size)
        cells = np.asarray(cells, dtype=np.int64)
        col, row = cells % self.n_cells, cells // self.n_cells
        offset = (np.stack([col, row], axis=1) + 0.5) * self.cell_size
        return offset - self.half_width


def make_gowalla_grids(center=GOWALLA_CENTER) -> Tuple[Grid, Grid]:
    """400 input cells of 150 m over a 3 km square, and 340 x 340 output
    cells of 15 m reaching 1050 m further on every side."""
    return Grid(center, 150.0, 20), Grid(center, 15.0, 340)


# --- checkins ----------------------------------------------------------------

def read_checkins(path) -> np.ndarray:
    """Read ``lat,lon`` lines (a non-numeric first line is taken as header)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                if len(parts) != 2:
                    raise ValueError(f"expected 2 fields, got {len(parts)}")
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError as exc:
                if lineno == 1 and not rows:
                    continue
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=float).reshape(-1, 2)


def write_checkins(checkins, path, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write("lat,lon\n")
        for lat, lon in np.asarray(checkins).tolist():
            fh.write(f"{lat!r},{lon!r}\n")


def prior_from_checkins(checkins, grid: Grid) -> Tuple[np.ndarray, int]:
    """Normalized per-cell checkin counts, and how many checkins fell
    outside the grid."""
    checkins = np.asarray(checkins, dtype=float).reshape(-1, 2)
    cells = grid.cell_of(grid.to_planar(checkins[:, 0], checkins[:, 1]))
    inside = cells >= 0
    n_in = int(inside.sum())
    if n_in == 0:
        raise ValueError("no checkins inside the grid")
    counts = np.bincount(cells[inside], minlength=grid.size)
    discarded = len(cells) - n_in
    if discarded:
        log.info("discarded %d checkins outside the grid", discarded)
    return counts / n_in, discarded


# Log-normal popularity profile standing in for real checkins.  The
# concentration was tuned (200 000 checkins, seed 0) so that the planar
# geometric mechanism at nu = 2 has Bayes risk 0.657.
SYNTHETIC_CONCENTRATION = 1.359
SYNTHETIC_CHECKINS = 200_000


def synthetic_cell_weights(grid: Grid, concentration: float, seed) -> np.ndarray:
    """Log-normal popularity per cell (normal quantiles scattered by a
    seeded permutation, so the profile is reproducible but irregular)."""
    n = grid.size
    z = norm.ppf((np.arange(n) + 0.5) / n)
    z = z[np.random.default_rng(seed).permutation(n)]
    w = np.exp(concentration * z)
    return w / w.sum()


def synthetic_checkins(grid: Grid, n: int = SYNTHETIC_CHECKINS,
                       concentration: float = SYNTHETIC_CONCENTRATION,
                       seed=0) -> np.ndarray:
    """Checkins (lat, lon) drawn from `synthetic_cell_weights`, placed
    uniformly inside their cell."""
    ss = np.random.SeedSequence(seed)
    layout, draws = ss.spawn(2)
    weights = synthetic_cell_weights(grid, concentration, layout)
    rng = np.random.default_rng(draws)
    cells = rng.choice(grid.size, size=n, p=weights)
    xy = grid.centers(cells) + (rng.random((n, 2)) - 0.5) * grid.cell_size
    return grid.to_latlon(xy)


# --- mechanisms ----------------------------------------------------------------

def beta_from_nu(nu: float) -> float:
    if not nu > 1:
        raise ValueError("nu must be greater than 1")
    return math.log(nu) / 100.0


def distance_matrix(input_grid: Grid, output_grid: Grid) -> np.ndarray:
    """Euclidean distances (meters) between input and output cell centers."""
    a, b = input_grid.centers(), output_grid.centers()
    d2 = (a[:, 0, None] - b[None, :, 0]) ** 2
    d2 += (a[:, 1, None] - b[None, :, 1]) ** 2
    return np.sqrt(d2, out=d2)


def planar_geometric(nu: Optional[float], prior, input_grid: Grid, output_grid: Grid,
                     beta: Optional[float] = None) -> System:
    """Planar geometric mechanism over the output cells.

    Pass `beta` (per meter) to override ``ln(nu) / 100``.
    """
    beta = beta_from_nu(nu) if beta is None else float(beta)
    if beta <= 0:
        raise ValueError("beta must be positive")
    C = distance_matrix(input_grid, output_grid)
    # each row is scaled by its own maximum before normalizing
    C -= C.min(axis=1, keepdims=True)
    C *= -beta
    np.exp(C, out=C)
    C /= C.sum(axis=1, keepdims=True)
    return System(prior, C, output_grid.centers())


def planar_laplacian_sample(cells, nu: float, seed, input_grid: Grid,
                            output_grid: Grid) -> np.ndarray:
    """Noisy planar locations for the input `cells`.

    Noise has density proportional to ``exp(-beta * r)`` around the cell
    center (uniform angle, radius ~ Gamma(2, 1/beta)); draws leaving the
    output square are redrawn.
    """
    beta = beta_from_nu(nu)
    rng = np.random.default_rng(seed)
    centers = input_grid.centers(np.atleast_1d(cells))
    out = np.empty_like(centers)
    todo = np.arange(len(centers))
    h = output_grid.half_width
    while todo.size:
        theta = rng.uniform(0.0, 2 * math.pi, todo.size)
        r = rng.gamma(2.0, 1.0 / beta, todo.size)
        pts = centers[todo] + r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        ok = np.all(np.abs(pts) < h, axis=1)
        out[todo[ok]] = pts[ok]
        todo = todo[~ok]
    return out


def laplacian_dataset(prior, nu: float, n: int, seed, input_grid: Grid,
                      output_grid: Grid) -> Dataset:
    """`n` examples (input cell, noisy planar location) with cells drawn
    from `prior`."""
    prior = np.asarray(prior, dtype=float)
    rng = np.random.default_rng(seed)
    secrets = rng.choice(prior.size, size=n, p=prior)
    obs = planar_laplacian_sample(secrets, nu, rng, input_grid, output_grid)
    return Dataset(secrets, obs, source="laplacian", seed=seed if isinstance(seed, int) else None,
                   n_secrets=prior.size)


@dataclass
class BlahutArimotoResult:
    system: System
    output_prior: np.ndarray
    iterations: int
    converged: bool
    objective: List[float] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iters reached"


def blahut_arimoto(prior, distance, beta: float, max_iters: int = 10_000,
                   tol: float = 1e-9, object_values=None,
                   prune: float = 1e-30) -> BlahutArimotoResult:
    """Rate-distortion optimal channel by alternating minimization.

    Iterates ``q(o|s) ~ p(o) exp(-beta d(s, o))`` and
    ``p(o) = sum_s prior(s) q(o|s)`` from a uniform `p` until the largest
    change of `p` is below `tol`.  ``objective[t] = -sum_s prior(s) ln Z_s``
    with ``Z_s = sum_o p_t(o) exp(-beta d(s, o))`` is recorded each
    iteration; it never increases.  Hitting `max_iters` emits a
    ``RuntimeWarning`` and returns the last iterate.

    Every ten iterations outputs with ``p(o) <= prune * max(p)`` are dropped
    from the computation and get probability zero.  With distances of a few
    km their share of any normalizer is far below double precision, so the
    iterates are unchanged while the cost falls with the support.  Pass
    ``prune=0`` to keep every output.
    """
    prior = np.asarray(prior, dtype=float)
    distance = np.asarray(distance, dtype=float)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not np.all(np.isfinite(distance)):
        raise ValueError("distances must be finite")
    if distance.shape[0] != prior.size:
        raise ValueError("distance rows must match the prior")
    n_o = distance.shape[1]
    # K is scaled per row by exp(beta * min_o d(s, o)); the scale cancels in q
    shift = distance.min(axis=1, keepdims=True)
    K_full = np.exp(-beta * (distance - shift))
    K = K_full
    active = np.arange(n_o)
    p = np.full(n_o, 1.0 / n_o)
    objective = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        Z = K @ p
        if np.any(Z <= 0):
            raise FloatingPointError("normalizer underflow; beta too large for these distances")
        objective.append(float(-(prior * (np.log(Z) - beta * shift[:, 0])).sum()))
        p_new = p * (K.T @ (prior / Z))
        p_new /= p_new.sum()
        change = np.max(np.abs(p_new - p))
        p = p_new
        if change < tol:
            converged = True
            break
        if prune > 0 and it % 10 == 0:
            keep = p > prune * p.max()
            if not keep.all():
                active, p = active[keep], p[keep] / p[keep].sum()
                K = np.ascontiguousarray(K_full[:, active])
    Z = K @ p
    Q = np.zeros_like(K_full)
    Q[:, active] = K * p[None, :] / Z[:, None]
    p_full = np.zeros(n_o)
    p_full[active] = p
    if not converged:
        warnings.warn(f"Blahut-Arimoto did not converge in {max_iters} iterations",
                      RuntimeWarning, stacklevel=2)
    return BlahutArimotoResult(System(prior, Q, object_values), p_full, it, converged,
                               objective)


def utility(system: System, distance) -> float:
    """Expected distortion ``sum_s prior(s) sum_o C[s, o] d(s, o)``."""
    distance = np.asarray(distance, dtype=float)
    if distance.shape != system.channel.shape:
        raise ValueError("distance matrix must match the channel shape")
    per_row = np.einsum("so,so->s", system.channel, distance)
    return float(system.prior @ per_row)
