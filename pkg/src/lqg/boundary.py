"""Free-boundary field, semicircle averages and boundary KPZ estimation.

The free field uses cosine-mode synthesis (Neumann walls) with the constant
mode removed and the spatial mean pinned to zero.  Semicircle averages at a
boundary point carry twice the log-variance of interior circle averages, so
the boundary quantum length of the arc of radius rho around a boundary point
z is

    mu_B(arc_rho(z)) = 2 * rho^(gamma*Q/2) * exp(gamma * h_rho(z) / 2),

the one-dimensional transplant of the bulk ball mass (the prefactor exponent
is gamma*Q/2 = 1 + gamma^2/4).  Boundary balls are arcs: the largest arc
whose quantum length is delta.

Exponent conventions: the boundary Euclidean exponent x of a set X inside an
edge is its codimension, P{dist(z, X) <= rho} ~ rho^x (a boundary point has
x = 1), and then the measured quantum-length exponent satisfies the same KPZ
map as in the bulk: Delta = kpz_delta_of_x(gamma, x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import gff, measure
from .analytics import gamma_params, kpz_delta_of_x
from .fractal import (ExponentEstimate, QuantumExponentDiagnostics,
                      DegenerateScalesError, _check_scale_hygiene, _wls_slope,
                      _cantor_membership, LOG2_OVER_LOG3, _pool_size)
from .seeds import derive_seed, rng_for

__all__ = [
    "BoundaryMask",
    "BoundaryDensity",
    "BOUNDARY_MASK_KINDS",
    "CORNER_MARGIN",
    "sample_free_gff",
    "semicircle_average",
    "build_boundary_density",
    "sample_boundary_points",
    "boundary_arc_radii",
    "make_boundary_fractal",
    "boundary_quantum_exponent",
]

BOUNDARY_MASK_KINDS = ("point", "cantor")
CORNER_MARGIN = 1.0 / 16.0
_FINE_FACTOR = 8


def sample_free_gff(grid: gff.Grid, seed: int) -> gff.GridField:
    """Free-boundary field: cosine synthesis, zero mode dropped, mean pinned to 0."""
    if grid.bc != gff.BC_FREE:
        raise ValueError("sample_free_gff needs a grid with bc='free'")
    return gff._sample_field(grid, seed)


def _check_boundary_point(grid: gff.Grid, z: tuple[float, float], eps: float) -> float:
    """Validate z on the bottom edge (y = 0) away from corners; returns x."""
    x, y = float(z[0]), float(z[1])
    if abs(y) > 1e-9:
        raise ValueError(f"z={z} is not on the bottom edge of the square")
    margin = max(eps, CORNER_MARGIN)
    if x < margin - 1e-12 or x > 1.0 - margin + 1e-12:
        raise ValueError(f"boundary point x={x} too close to a corner (margin {margin})")
    if eps < 2.0 * grid.spacing - 1e-12:
        raise ValueError(f"eps={eps} below grid resolution limit")
    return x


def semicircle_average(field: gff.GridField, z: tuple[float, float], eps: float) -> float:
    """Mean of the field over the half-circle of radius eps inside D around a
    boundary point z on the bottom edge (midpoint angular quadrature)."""
    grid = field.grid
    x = _check_boundary_point(grid, z, eps)
    K = gff.circle_points(eps, grid.spacing)
    th = math.pi * (np.arange(K) + 0.5) / K
    xs = x + eps * np.cos(th)
    ys = eps * np.sin(th)
    return float(gff._bilinear_padded(field.padded(), grid.n, xs, ys).mean())


def _semicircle_averages_multi(field: gff.GridField, xs0: np.ndarray,
                               ladder: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """(len(xs0), len(ladder)) semicircle averages on the bottom edge."""
    grid = field.grid
    padded = field.padded()
    out = np.full((len(xs0), len(ladder)), np.nan)
    for r, eps in enumerate(ladder):
        ok = np.flatnonzero(valid[:, r])
        if ok.size == 0:
            continue
        K = gff.circle_points(eps, grid.spacing)
        th = math.pi * (np.arange(K) + 0.5) / K
        px = xs0[ok][:, None] + eps * np.cos(th)[None, :]
        py = np.broadcast_to(eps * np.sin(th), px.shape)
        out[ok, r] = gff._bilinear_padded(padded, grid.n, px, py).mean(axis=1)
    return out


@dataclass
class BoundaryDensity:
    """Boundary quantum length per boundary cell of the bottom edge:
    eps^(gamma^2/4) exp(gamma h_eps/2) * cell length."""

    field: gff.GridField
    gamma: float
    eps: float
    masses: np.ndarray
    _cum: np.ndarray | None = dc_field(default=None, repr=False, compare=False)

    def cumulative(self) -> np.ndarray:
        if self._cum is None:
            self._cum = np.cumsum(self.masses)
        return self._cum


def build_boundary_density(field: gff.GridField, gamma: float, eps: float) -> BoundaryDensity:
    grid = field.grid
    n = grid.n
    if gamma == 0.0:
        masses = np.full(n, 1.0 / n)
    else:
        xs0 = grid.cell_centers()
        valid = np.ones((n, 1), dtype=bool)
        h = _semicircle_averages_multi(field, xs0, np.array([eps]), valid)[:, 0]
        masses = eps ** (gamma * gamma / 4.0) * np.exp(0.5 * gamma * h) / n
    return BoundaryDensity(field=field, gamma=float(gamma), eps=float(eps), masses=masses)


def sample_boundary_points(density: BoundaryDensity, rng: np.random.Generator,
                           size: int) -> np.ndarray:
    """Edge coordinates drawn proportionally to boundary cell mass, jittered."""
    cum = density.cumulative()
    n = density.field.grid.n
    u = rng.random(size) * cum[-1]
    idx = np.clip(np.searchsorted(cum, u, side="right"), 0, n - 1)
    return (idx + rng.random(size)) / n


def boundary_arc_radii(field: gff.GridField, gamma: float, xs0: np.ndarray,
                       deltas: np.ndarray, eps_max: float = 0.3):
    """Solve the largest arc radius with boundary quantum length delta, per
    point and per delta, sharing one ladder trace per point."""
    grid = field.grid
    g = gamma_params(gamma)
    ladder = measure.default_scan_ladder(grid, eps_max)
    xs0 = np.asarray(xs0, dtype=float)
    corner = np.minimum(xs0, 1.0 - xs0)
    valid = ladder[None, :] <= np.minimum(corner, 1.0)[:, None] + 1e-12
    h = _semicircle_averages_multi(field, xs0, ladder, valid)
    masses = 2.0 * ladder[None, :] ** (gamma * g.Q / 2.0) * np.exp(0.5 * gamma * h)
    deltas = np.asarray(deltas, dtype=float)
    radii = np.full((len(xs0), len(deltas)), np.nan)
    hit = np.zeros((len(xs0), len(deltas)), dtype=bool)
    reason = np.full((len(xs0), len(deltas)), measure.REASON_ALL_ABOVE, dtype=object)
    for p in range(len(xs0)):
        for d, delta in enumerate(deltas):
            radii[p, d], hit[p, d], reason[p, d] = measure._solve_crossing(
                ladder, masses[p], delta)
    return radii, hit, reason


@dataclass
class BoundaryMask:
    """Fractal subset of the bottom edge with codimension exponent known_x."""

    grid: gff.Grid
    cells: np.ndarray          # (n,) bool along the edge
    kind: str
    known_x: float | None
    _dist: np.ndarray | None = dc_field(default=None, repr=False, compare=False)
    _fine_n: int = dc_field(default=0, repr=False, compare=False)

    def distance(self, xs: np.ndarray) -> np.ndarray:
        fn = self._fine_n
        u = np.clip(np.asarray(xs, dtype=float) * fn - 0.5, 0.0, fn - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.intp), fn - 2)
        fu = u - i0
        D = self._dist
        return (1 - fu) * D[i0] + fu * D[i0 + 1]


def _rasterize_boundary(kind: str, n: int, depth: int) -> np.ndarray:
    c = (np.arange(n) + 0.5) / n
    if kind == "point":
        occ = np.zeros(n, dtype=bool)
        occ[n // 2] = True
        return occ
    if kind == "cantor":
        inside = (c >= 0.25) & (c < 0.75)
        t = np.clip((c - 0.25) * 2.0, 0.0, 1.0 - 1e-12)
        return inside & _cantor_membership(t, depth)
    raise ValueError(f"unknown boundary mask kind {kind!r}")


def make_boundary_fractal(kind: str, grid: gff.Grid, depth: int = 5) -> BoundaryMask:
    """Boundary test sets on the bottom edge: a single point (x = 1) and the
    middle-thirds Cantor set in [1/4, 3/4] (x = 1 - log2/log3)."""
    if kind not in BOUNDARY_MASK_KINDS:
        raise ValueError(f"unknown boundary mask kind {kind!r}")
    n = grid.n
    cells = _rasterize_boundary(kind, n, depth)
    from scipy import ndimage
    fine_n = _FINE_FACTOR * n
    fine = _rasterize_boundary(kind, fine_n, depth)
    dist = ndimage.distance_transform_edt(~fine, sampling=1.0 / fine_n)
    known = {"point": 1.0, "cantor": 1.0 - LOG2_OVER_LOG3}[kind]
    return BoundaryMask(grid=grid, cells=cells, kind=kind, known_x=known,
                        _dist=dist, _fine_n=fine_n)


_BWORKER_CTX: dict | None = None


def _init_boundary_worker(ctx: dict) -> None:
    global _BWORKER_CTX
    _BWORKER_CTX = ctx


def _boundary_field_counts(findex: int):
    ctx = _BWORKER_CTX
    mask: BoundaryMask = ctx["mask"]
    gamma = ctx["gamma"]
    deltas = ctx["deltas"]
    seed = ctx["seed"]
    field = gff._sample_field(mask.grid, derive_seed(seed, findex))
    density = build_boundary_density(field, gamma, ctx["eps_density"])
    rng = rng_for(seed, 717, findex)
    raw = sample_boundary_points(density, rng, ctx["n_points"])
    # corner margin: arcs and semicircles must stay on the edge interior
    xs0 = raw[(raw >= 2 * CORNER_MARGIN) & (raw <= 1.0 - 2 * CORNER_MARGIN)]
    radii, hit, reasons = boundary_arc_radii(field, gamma, xs0, deltas,
                                             eps_max=ctx["eps_max"])
    d = mask.distance(xs0)
    hits = np.zeros(len(deltas), dtype=int)
    valid = np.zeros(len(deltas), dtype=int)
    excl: dict[str, int] = {"corner_margin": len(raw) - len(xs0)}
    for di in range(len(deltas)):
        ok = hit[:, di]
        valid[di] = int(ok.sum())
        hits[di] = int((ok & (d <= radii[:, di])).sum())
        for r in reasons[~ok, di]:
            excl[r] = excl.get(r, 0) + 1
    return hits, valid, excl


def boundary_quantum_exponent(mask: BoundaryMask, gamma: float, delta_ladder=None,
                              n_fields: int = 200, n_points: int = 50, seed: int = 0,
                              eps_density: float | None = None, eps_max: float = 0.3,
                              n_boot: int = 200, workers: int | None = None,
                              ) -> tuple[ExponentEstimate, QuantumExponentDiagnostics]:
    """Boundary analog of the quantum exponent: z from the boundary quantum
    measure, arcs of quantum length delta, 1-D intersection test.

    The scan ceiling is taller than the bulk default because arc length grows
    only like rho^(gamma*Q/2) with gamma*Q/2 close to 1, so useful arcs are
    long compared to bulk balls of the same quantum size."""
    if not 0.0 < gamma < 2.0:
        raise ValueError(f"boundary exponents need 0 < gamma < 2, got {gamma}")
    if mask.grid.bc != gff.BC_FREE:
        raise ValueError("boundary masks must sit on a free-boundary grid")
    if delta_ladder is None:
        from .fractal import default_delta_ladder
        delta_ladder = default_delta_ladder()
    deltas = np.sort(np.asarray(delta_ladder, dtype=float))[::-1]
    if eps_density is None:
        eps_density = 4.0 * mask.grid.spacing
    ctx = {"mask": mask, "gamma": float(gamma), "deltas": deltas, "seed": int(seed),
           "n_points": int(n_points), "eps_density": float(eps_density),
           "eps_max": float(eps_max)}
    nw = _pool_size(workers)
    if nw == 1:
        _init_boundary_worker(ctx)
        parts = [_boundary_field_counts(f) for f in range(n_fields)]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=nw, initializer=_init_boundary_worker,
                                 initargs=(ctx,)) as pool:
            parts = list(pool.map(_boundary_field_counts, range(n_fields), chunksize=4))
    hits = np.stack([p[0] for p in parts])
    valid = np.stack([p[1] for p in parts])
    excluded: dict[str, int] = {}
    for p in parts:
        for r, cnt in p[2].items():
            excluded[r] = excluded.get(r, 0) + cnt
    tot_h = hits.sum(axis=0)
    tot_v = valid.sum(axis=0)
    keep = _check_scale_hygiene(deltas, tot_h, tot_v)
    dropped = tuple(float(deltas[k]) for k in range(len(deltas)) if k not in keep)
    lx = np.log(deltas[keep])
    p_hat = tot_h[keep] / tot_v[keep]
    w = tot_v[keep] * p_hat / (1.0 - p_hat)
    slope, _, r2 = _wls_slope(lx, np.log(p_hat), w)
    boot = rng_for(seed, 718)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        pick = boot.integers(0, n_fields, size=n_fields)
        h = hits[pick].sum(axis=0)[keep]
        v = valid[pick].sum(axis=0)[keep]
        pb = np.clip(np.where(v > 0, h / np.maximum(v, 1), 0.0), 1e-12, 1 - 1e-12)
        slopes[b], _, _ = _wls_slope(lx, np.log(pb), w)
    est = ExponentEstimate(
        exponent=float(slope),
        stderr=float(slopes.std(ddof=1)),
        scales=tuple((float(deltas[k]), float(math.log(tot_h[k] / tot_v[k]))) for k in keep),
        r2=float(r2),
    )
    diag = QuantumExponentDiagnostics(valid=int(tot_v.sum()), excluded=excluded,
                                      dropped_rungs=dropped)
    return est, diag


def boundary_delta_theory(gamma: float, known_x: float) -> float:
    """Predicted boundary quantum exponent for a codimension-x boundary set."""
    return kpz_delta_of_x(gamma_params(gamma), known_x).delta
