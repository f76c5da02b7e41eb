"""Fractal test sets and Euclidean / quantum scaling-exponent estimators.

Test sets are rasterized on the cell grid plus a finer raster used only for
the Euclidean distance transform, so the hit test B_eps(z) intersects X
reduces to dist(z) <= eps, O(1) per query.  Exponents come from weighted
log-log regression of hit probabilities over a scale ladder, with bootstrap
standard errors (over samples for the Euclidean side, over fields for the
quantum side, which is where the correlations live).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from . import gff, measure
from .analytics import GammaParams, gamma_params, kpz_delta_of_x
from .seeds import derive_seed, rng_for

__all__ = [
    "FractalMask",
    "ExponentEstimate",
    "QuantumExponentDiagnostics",
    "KpzRow",
    "KpzReport",
    "DegenerateScalesError",
    "make_fractal",
    "euclidean_exponent",
    "quantum_exponent",
    "kpz_verify",
    "default_euclidean_ladder",
    "default_delta_ladder",
]

MASK_KINDS = ("point", "segment", "cantor_dust", "random_walk_range")
MASK_MARGIN = 1.0 / 8.0
_FINE_FACTOR = 4  # distance-transform raster is FINE_FACTOR * n per side

LOG2_OVER_LOG3 = math.log(2.0) / math.log(3.0)


class DegenerateScalesError(ValueError):
    """Raised when hygiene filtering leaves too few usable scales."""

    def __init__(self, message: str, usable: list[float]):
        super().__init__(message)
        self.usable = usable


@dataclass
class FractalMask:
    """Occupied-cell set with a known Euclidean exponent where theory gives one."""

    grid: gff.Grid
    cells: np.ndarray            # (n, n) bool
    kind: str
    known_x: float | None
    seed: int | None = None
    _dist: np.ndarray | None = dc_field(default=None, repr=False, compare=False)
    _fine_n: int = dc_field(default=0, repr=False, compare=False)

    def distance(self, zs: np.ndarray) -> np.ndarray:
        """Euclidean distance from each query point to the set (bilinear lookup
        in a distance transform on the fine raster)."""
        if self._dist is None:
            raise RuntimeError("mask built without a distance field")
        zs = np.atleast_2d(np.asarray(zs, dtype=float))
        fn = self._fine_n
        u = np.clip(zs[:, 0] * fn - 0.5, 0.0, fn - 1.0)
        v = np.clip(zs[:, 1] * fn - 0.5, 0.0, fn - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.intp), fn - 2)
        j0 = np.minimum(np.floor(v).astype(np.intp), fn - 2)
        fu = u - i0
        fv = v - j0
        D = self._dist
        return ((1 - fu) * (1 - fv) * D[i0, j0] + fu * (1 - fv) * D[i0 + 1, j0]
                + (1 - fu) * fv * D[i0, j0 + 1] + fu * fv * D[i0 + 1, j0 + 1])


@dataclass(frozen=True)
class ExponentEstimate:
    """Log-log slope estimate with bootstrap stderr and fit diagnostics."""

    exponent: float
    stderr: float
    scales: tuple[tuple[float, float], ...]  # (scale, log hit probability)
    r2: float


@dataclass(frozen=True)
class QuantumExponentDiagnostics:
    """Exclusion bookkeeping for the quantum estimator."""

    valid: int
    excluded: dict[str, int]
    dropped_rungs: tuple[float, ...]


def _cantor_membership(t: np.ndarray, depth: int) -> np.ndarray:
    """True where the first `depth` ternary digits of t avoid the middle third."""
    keep = np.ones_like(t, dtype=bool)
    s = t.copy()
    for _ in range(depth):
        s = s * 3.0
        digit = np.floor(s).astype(int)
        keep &= digit != 1
        s -= digit
    return keep


def _rasterize(kind: str, n: int, depth: int, seed: int | None):
    """Boolean occupancy on an n x n raster for each deterministic kind."""
    c = (np.arange(n) + 0.5) / n
    occ = np.zeros((n, n), dtype=bool)
    if kind == "point":
        i = int(0.5 * n)
        occ[i, i] = True
    elif kind == "segment":
        row = int(0.5 * n)
        cols = (c >= 0.25) & (c <= 0.75)
        occ[cols, row] = True
    elif kind == "cantor_dust":
        inside = (c >= 0.25) & (c < 0.75)
        t = np.clip((c - 0.25) * 2.0, 0.0, 1.0 - 1e-12)
        member = inside & _cantor_membership(t, depth)
        occ = member[:, None] & member[None, :]
    elif kind == "random_walk_range":
        rng = rng_for(0 if seed is None else seed, 911)
        lo, hi = int(MASK_MARGIN * n) + 1, int((1 - MASK_MARGIN) * n) - 2
        i = j = n // 2
        occ[i, j] = True
        steps = rng.integers(0, 4, size=4 * n)
        for s in steps:
            di, dj = ((1, 0), (-1, 0), (0, 1), (0, -1))[s]
            i = min(max(i + di, lo), hi)
            j = min(max(j + dj, lo), hi)
            occ[i, j] = True
    else:
        raise ValueError(f"unknown fractal kind {kind!r}")
    return occ


def make_fractal(kind: str, grid: gff.Grid, depth: int = 5,
                 seed: int | None = None) -> FractalMask:
    """Build a test set with its distance field.

    kinds: point (x=1), segment (x=1/2), cantor_dust (middle-thirds product in
    [1/4,3/4]^2, x = 1 - log2/log3) and the exploratory random_walk_range
    (seeded, no known exponent).
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown fractal kind {kind!r}")
    if kind == "cantor_dust" and depth < 3:
        raise ValueError("cantor_dust needs depth >= 3")
    n = grid.n
    cells = _rasterize(kind, n, depth, seed)
    ii, jj = np.nonzero(cells)
    centers = (np.stack([ii, jj], axis=1) + 0.5) / n
    if centers.size == 0:
        raise ValueError("empty mask")
    if centers.min() < MASK_MARGIN - 1e-9 or centers.max() > 1 - MASK_MARGIN + 1e-9:
        raise ValueError(f"{kind} mask violates the {MASK_MARGIN} boundary margin")
    known = {"point": 1.0, "segment": 0.5,
             "cantor_dust": 1.0 - LOG2_OVER_LOG3}.get(kind)
    fine_n = _FINE_FACTOR * n
    fine = _rasterize(kind, fine_n, depth, seed) if kind != "random_walk_range" else None
    if fine is None:
        # upsample the coarse walk range; geometry is cell-scale anyway
        fine = np.kron(cells, np.ones((_FINE_FACTOR, _FINE_FACTOR), dtype=bool))
    dist = ndimage.distance_transform_edt(~fine, sampling=1.0 / fine_n)
    return FractalMask(grid=grid, cells=cells, kind=kind, known_x=known, seed=seed,
                       _dist=dist, _fine_n=fine_n)


# ---------------------------------------------------------------------------
# regression machinery
# ---------------------------------------------------------------------------

def default_euclidean_ladder(kind: str, grid: gff.Grid) -> np.ndarray:
    """Halving ladders spanning >= 1.2 decades, tuned per kind: larger scales
    for the point (hits get scarce), smaller for sets with sausage curvature."""
    if kind == "point":
        lad = [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64]
    elif kind == "cantor_dust":
        lad = [1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256]
    else:
        lad = [1 / 32, 1 / 64, 1 / 128, 1 / 256, 1 / 512]
    floor = 4.0 / (_FINE_FACTOR * grid.n)
    return np.array([e for e in lad if e >= floor])


def default_delta_ladder(k_max: int = 5) -> np.ndarray:
    """delta_k = 10^(-2 - k/2), k = 0..k_max."""
    return 10.0 ** (-2.0 - 0.5 * np.arange(k_max + 1))


def _wls_slope(lx: np.ndarray, ly: np.ndarray, w: np.ndarray):
    """Weighted least squares slope/intercept plus weighted r^2."""
    W = w / w.sum()
    mx = (W * lx).sum()
    my = (W * ly).sum()
    cov = (W * (lx - mx) * (ly - my)).sum()
    vx = (W * (lx - mx) ** 2).sum()
    slope = cov / vx
    inter = my - slope * mx
    ss_res = (W * (ly - inter - slope * lx) ** 2).sum()
    ss_tot = (W * (ly - my) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, inter, r2


def _check_scale_hygiene(ladder, counts, totals):
    """Keep rungs with 10 <= hits <= total-10; demand >= 4 rungs over 1.2 decades."""
    keep = [k for k in range(len(ladder))
            if 10 <= counts[k] <= totals[k] - 10 and totals[k] > 0]
    usable = [float(ladder[k]) for k in keep]
    if len(keep) < 4 or (len(keep) and math.log10(max(usable) / min(usable)) < 1.2 - 1e-9):
        raise DegenerateScalesError(
            f"only {len(keep)} usable scales {usable}; need >= 4 spanning >= 1.2 decades",
            usable)
    return keep


def euclidean_exponent(mask: FractalMask, eps_ladder=None, n_samples: int = 100_000,
                       seed: int = 0, n_boot: int = 200) -> ExponentEstimate:
    """Estimate x from P{B_eps(z) hits X} ~ eps^(2x) with z uniform in D.

    Independent uniform samples per rung; slope of log P against log eps by
    weighted least squares (binomial weights), halved; stderr from a
    parametric binomial bootstrap.
    """
    if eps_ladder is None:
        eps_ladder = default_euclidean_ladder(mask.kind, mask.grid)
    ladder = np.sort(np.asarray(eps_ladder, dtype=float))[::-1]
    counts = np.zeros(len(ladder), dtype=int)
    for k, eps in enumerate(ladder):
        rng = rng_for(seed, 101, k)
        zs = rng.random((n_samples, 2))
        counts[k] = int((mask.distance(zs) <= eps).sum())
    totals = np.full(len(ladder), n_samples)
    keep = _check_scale_hygiene(ladder, counts, totals)
    lx = np.log(ladder[keep])
    p = counts[keep] / n_samples
    ly = np.log(p)
    w = n_samples * p / (1.0 - p)
    slope, _, r2 = _wls_slope(lx, ly, w)
    boot = rng_for(seed, 102)
    slopes = np.empty(n_boot)
    for b in range(n_boot):
        pb = boot.binomial(n_samples, p) / n_samples
        pb = np.clip(pb, 1e-12, 1.0)
        slopes[b], _, _ = _wls_slope(lx, np.log(pb), w)
    return ExponentEstimate(
        exponent=float(slope / 2.0),
        stderr=float(slopes.std(ddof=1) / 2.0),
        scales=tuple((float(ladder[k]), float(math.log(counts[k] / n_samples))) for k in keep),
        r2=float(r2),
    )


_WORKER_CTX: dict | None = None


def _init_quantum_worker(ctx: dict) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _quantum_field_counts(findex: int):
    """Hits/valid per delta rung for one field (worker unit)."""
    ctx = _WORKER_CTX
    mask: FractalMask = ctx["mask"]
    gamma = ctx["gamma"]
    deltas = ctx["deltas"]
    seed = ctx["seed"]
    field = gff._sample_field(mask.grid, derive_seed(seed, findex))
    density = measure.build_quantum_density(field, gamma, ctx["eps_density"])
    rng = rng_for(seed, 313, findex)
    zs = measure.sample_quantum_points(density, rng, ctx["n_points"])
    radii, hit, reasons = measure.quantum_ball_radii(field, gamma, zs, deltas,
                                                     eps_max=ctx["eps_max"])
    d = mask.distance(zs)
    hits = np.zeros(len(deltas), dtype=int)
    valid = np.zeros(len(deltas), dtype=int)
    excl: dict[str, int] = {}
    for di in range(len(deltas)):
        ok = hit[:, di]
        valid[di] = int(ok.sum())
        hits[di] = int((ok & (d <= radii[:, di])).sum())
        for r in reasons[~ok, di]:
            excl[r] = excl.get(r, 0) + 1
    return hits, valid, excl


def quantum_exponent(mask: FractalMask, gamma: float, delta_ladder=None,
                     n_fields: int = 200, n_points: int = 50, seed: int = 0,
                     eps_density: float | None = None, eps_max: float = 1 / 8,
                     n_boot: int = 200, workers: int | None = None,
                     ) -> tuple[ExponentEstimate, QuantumExponentDiagnostics]:
    """Estimate Delta from P{quantum ball of mass delta hits X} ~ delta^Delta.

    Per field: sample z's from the regularized quantum measure of that field,
    solve the quantum-ball radius at each z for every delta in the ladder
    (one scan trace per z), and test dist(z) <= radius.  Points whose ball
    solve reports hit=False are excluded and counted per reason.  The slope
    is over pooled rates; stderr bootstraps over fields.
    """
    if not 0.0 < gamma < 2.0:
        raise ValueError(f"quantum exponents need 0 < gamma < 2, got {gamma}")
    grid = mask.grid
    if delta_ladder is None:
        delta_ladder = default_delta_ladder()
    deltas = np.sort(np.asarray(delta_ladder, dtype=float))[::-1]
    if eps_density is None:
        eps_density = 4.0 * grid.spacing
    ctx = {"mask": mask, "gamma": float(gamma), "deltas": deltas, "seed": int(seed),
           "n_points": int(n_points), "eps_density": float(eps_density),
           "eps_max": float(eps_max)}
    nw = _pool_size(workers)
    if nw == 1:
        _init_quantum_worker(ctx)
        parts = [_quantum_field_counts(f) for f in range(n_fields)]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=nw, initializer=_init_quantum_worker,
                                 initargs=(ctx,)) as pool:
            parts = list(pool.map(_quantum_field_counts, range(n_fields), chunksize=4))
    hits = np.stack([p[0] for p in parts])    # (fields, rungs)
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
    boot = rng_for(seed, 314)
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


def _pool_size(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    import os
    env = os.environ.get("LQG_THREADS")
    return max(1, int(env)) if env else 1


@dataclass(frozen=True)
class KpzRow:
    gamma: float
    x: float
    delta_hat: float
    stderr: float
    delta_theory: float
    z_score: float
    r2: float


@dataclass(frozen=True)
class KpzReport:
    mask_kind: str
    rows: tuple[KpzRow, ...]
    diagnostics: tuple[QuantumExponentDiagnostics, ...]


def default_eps_max(kind: str) -> float:
    """Scan ceiling for the quantum-ball ladder.  Hit-point sets (x near 1)
    have quantum balls that regularly exceed 1/8 at the coarse delta rungs,
    so the point mask scans a taller ladder."""
    return 0.3 if kind == "point" else 1.0 / 8.0


def kpz_verify(mask: FractalMask, gamma_list, delta_ladder=None, n_fields: int = 200,
               n_points: int = 50, seed: int = 0, eps_density: float | None = None,
               eps_max: float | None = None, workers: int | None = None) -> KpzReport:
    """Tabulate measured vs predicted quantum exponents for one mask.

    Uses the mask's known exponent when it has one, otherwise estimates it
    first.  z-scores are against the bootstrap stderr of Delta-hat.
    """
    if mask.known_x is not None:
        x = mask.known_x
    else:
        x = euclidean_exponent(mask, seed=derive_seed(seed, 555)).exponent
    if eps_max is None:
        eps_max = default_eps_max(mask.kind)
    rows = []
    diags = []
    for gi, gamma in enumerate(gamma_list):
        est, diag = quantum_exponent(mask, gamma, delta_ladder=delta_ladder,
                                     n_fields=n_fields, n_points=n_points,
                                     seed=derive_seed(seed, gi), eps_density=eps_density,
                                     eps_max=eps_max, workers=workers)
        th = kpz_delta_of_x(gamma_params(gamma), x).delta
        z = (est.exponent - th) / est.stderr if est.stderr > 0 else math.inf
        rows.append(KpzRow(gamma=float(gamma), x=float(x), delta_hat=est.exponent,
                           stderr=est.stderr, delta_theory=float(th), z_score=float(z),
                           r2=est.r2))
        diags.append(diag)
    return KpzReport(mask_kind=mask.kind, rows=tuple(rows), diagnostics=tuple(diags))
