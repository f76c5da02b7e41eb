"""Regularized quantum area measure and quantum-ball radii.

Ball mass is defined directly on balls: mu(B_eps(z)) = pi * eps^(gamma*Q) *
exp(gamma * h_eps(z)).  The quantum ball of area delta around z is the
largest Euclidean ball whose mass is delta, found by scanning a geometric
ladder of radii and interpolating the crossing in log-log.  The density grid
(cell mass = eps^(gamma^2/2) exp(gamma h_eps) * cell area at a fixed
regularization scale) only ever supplies relative weights for sampling
quantum-typical points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy import fft as sp_fft

from . import gff
from .analytics import gamma_params

__all__ = [
    "QuantumDensity",
    "QuantumBallResult",
    "DensityCheckResult",
    "REASON_OK",
    "REASON_ALL_ABOVE",
    "REASON_AMBIGUOUS_AT_MAX",
    "ball_mass",
    "mass_ladder",
    "quantum_ball_radius",
    "quantum_ball_radii",
    "build_quantum_density",
    "sample_quantum_point",
    "sample_quantum_points",
    "expected_density_check",
    "default_scan_ladder",
]

REASON_OK = "ok"
REASON_ALL_ABOVE = "all_above"            # mass > delta at every usable rung
REASON_AMBIGUOUS_AT_MAX = "ambiguous_at_max"  # mass <= delta already at the top rung

DEFAULT_SCAN_RATIO = 2.0 ** (-1.0 / 8.0)
DEFAULT_EPS_MAX = 1.0 / 8.0


@dataclass(frozen=True)
class QuantumBallResult:
    """Solved radius for mu(B_eps(z)) = delta, with the scan trace."""

    z: tuple[float, float]
    delta: float
    eps: float
    hit: bool
    reason: str
    trace: tuple[tuple[float, float], ...]  # (eps, mass) rungs, eps descending


@dataclass
class QuantumDensity:
    """Cell masses of the regularized measure for one field at scale eps."""

    field: gff.GridField
    gamma: float
    eps: float
    masses: np.ndarray
    _cum: np.ndarray | None = dc_field(default=None, repr=False, compare=False)

    def total_mass(self) -> float:
        return float(self.masses.sum())

    def cumulative(self) -> np.ndarray:
        if self._cum is None:
            self._cum = np.cumsum(self.masses.ravel())
        return self._cum


@dataclass(frozen=True)
class DensityCheckResult:
    """Ensemble mean of M_eps(z) relative to C(z)^(gamma^2/2) per probe site."""

    sites: tuple[tuple[float, float], ...]
    ratios: np.ndarray
    stderrs: np.ndarray
    n_fields: int


def ball_mass(field: gff.GridField, gamma: float, z: tuple[float, float], eps: float) -> float:
    """pi * eps^(gamma*Q) * exp(gamma * h_eps(z)); Lebesgue pi*eps^2 at gamma=0."""
    if gamma == 0.0:
        gff._check_circle(field.grid, z, eps)
        return math.pi * eps * eps
    g = gamma_params(gamma)
    h = gff.circle_average(field, z, eps).value
    return math.pi * eps ** (gamma * g.Q) * math.exp(gamma * h)


def default_scan_ladder(grid: gff.Grid, eps_max: float = DEFAULT_EPS_MAX,
                        ratio: float = DEFAULT_SCAN_RATIO) -> np.ndarray:
    """Geometric radii eps_max * ratio^k down to the resolution floor 2*spacing."""
    eps_min = 2.0 * grid.spacing
    if eps_max < eps_min:
        raise ValueError(f"eps_max={eps_max} below resolution floor {eps_min}")
    k_max = int(math.floor(math.log(eps_min / eps_max) / math.log(ratio) + 1e-9))
    return eps_max * ratio ** np.arange(k_max + 1)


def mass_ladder(field: gff.GridField, gamma: float, zs: np.ndarray,
                ladder: np.ndarray) -> np.ndarray:
    """(len(zs), len(ladder)) ball masses; NaN where a circle is unusable."""
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    h = gff.circle_averages_grid(field, zs, ladder)
    if gamma == 0.0:
        masses = np.where(np.isnan(h), np.nan, math.pi * np.asarray(ladder) ** 2)
        return np.broadcast_to(masses, h.shape).copy()
    g = gamma_params(gamma)
    return math.pi * np.asarray(ladder) ** (gamma * g.Q) * np.exp(gamma * h)


def _solve_crossing(ladder: np.ndarray, masses: np.ndarray, delta: float):
    """Largest-crossing search on one descending-radius trace."""
    finite = np.isfinite(masses)
    if not finite.any():
        return math.nan, False, REASON_ALL_ABOVE
    first = int(np.argmax(finite))
    eps_f = ladder[finite]
    m_f = masses[finite]
    below = m_f <= delta
    if below[0]:
        return float(eps_f[0]), False, REASON_AMBIGUOUS_AT_MAX
    if not below.any():
        return math.nan, False, REASON_ALL_ABOVE
    k = int(np.argmax(below))
    lm_hi, lm_lo = math.log(m_f[k - 1]), math.log(m_f[k])
    le_hi, le_lo = math.log(eps_f[k - 1]), math.log(eps_f[k])
    if lm_hi == lm_lo:
        return float(eps_f[k]), True, REASON_OK
    t = (math.log(delta) - lm_lo) / (lm_hi - lm_lo)
    return float(math.exp(le_lo + t * (le_hi - le_lo))), True, REASON_OK


def quantum_ball_radius(field: gff.GridField, gamma: float, z: tuple[float, float],
                        delta: float, eps_max: float = DEFAULT_EPS_MAX,
                        ratio: float = DEFAULT_SCAN_RATIO) -> QuantumBallResult:
    """Scan the radius ladder at z and solve mu(B_eps(z)) = delta.

    Pathwise non-monotone mass is resolved by taking the largest radius at
    which the mass first drops to <= delta; the crossing is interpolated
    linearly in log-log between the bracketing rungs.  hit=False comes with a
    distinct reason when the mass is below delta already at the largest rung
    (ambiguous) or never drops below it within the resolvable range.
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    grid = field.grid
    ladder = default_scan_ladder(grid, eps_max, ratio)
    margin = min(z[0], z[1], 1.0 - z[0], 1.0 - z[1])
    masses = mass_ladder(field, gamma, [z], ladder)[0]
    masses = np.where(ladder <= margin + 1e-12, masses, np.nan)
    eps, hit, reason = _solve_crossing(ladder, masses, delta)
    trace = tuple((float(e), float(m)) for e, m in zip(ladder, masses) if np.isfinite(m))
    return QuantumBallResult(z=(float(z[0]), float(z[1])), delta=float(delta),
                             eps=eps, hit=hit, reason=reason, trace=trace)


def quantum_ball_radii(field: gff.GridField, gamma: float, zs: np.ndarray,
                       deltas: np.ndarray, eps_max: float = DEFAULT_EPS_MAX,
                       ratio: float = DEFAULT_SCAN_RATIO):
    """Vectorized ladder solve: radii[p, d], hit[p, d], reason[p, d] for every
    point and target mass, sharing one scan trace per point."""
    grid = field.grid
    ladder = default_scan_ladder(grid, eps_max, ratio)
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    margins = np.minimum.reduce([zs[:, 0], zs[:, 1], 1.0 - zs[:, 0], 1.0 - zs[:, 1]])
    valid = ladder[None, :] <= margins[:, None] + 1e-12
    masses = gff.circle_averages_grid(field, zs, ladder, valid=valid)
    if gamma == 0.0:
        masses = np.where(np.isnan(masses), np.nan, math.pi * ladder[None, :] ** 2)
    else:
        g = gamma_params(gamma)
        masses = math.pi * ladder[None, :] ** (gamma * g.Q) * np.exp(gamma * masses)
    deltas = np.asarray(deltas, dtype=float)
    radii = np.full((len(zs), len(deltas)), np.nan)
    hit = np.zeros((len(zs), len(deltas)), dtype=bool)
    reason = np.full((len(zs), len(deltas)), REASON_ALL_ABOVE, dtype=object)
    for p in range(len(zs)):
        for d, delta in enumerate(deltas):
            radii[p, d], hit[p, d], reason[p, d] = _solve_crossing(ladder, masses[p], delta)
    return radii, hit, reason


# ---------------------------------------------------------------------------
# density grid: circle averages at every cell via FFT convolution
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _kernel_fft(n: int, eps: float):
    """rDFT of the circle-average stencil on the (2n)-periodic extension."""
    K = gff.circle_points(eps, 1.0 / n)
    th = 2.0 * math.pi * np.arange(K) / K
    u = eps * np.cos(th) * n
    v = eps * np.sin(th) * n
    i0 = np.floor(u).astype(np.intp)
    j0 = np.floor(v).astype(np.intp)
    fu = u - i0
    fv = v - j0
    kern = np.zeros((2 * n, 2 * n))
    # correlation kernel: weight for offset o goes to index (-o) mod 2n
    for di, dj, w in ((i0, j0, (1 - fu) * (1 - fv)), (i0 + 1, j0, fu * (1 - fv)),
                      (i0, j0 + 1, (1 - fu) * fv), (i0 + 1, j0 + 1, fu * fv)):
        np.add.at(kern, ((-di) % (2 * n), (-dj) % (2 * n)), w / K)
    return sp_fft.rfft2(kern)


def grid_circle_averages(field: gff.GridField, eps: float) -> np.ndarray:
    """h_eps at every cell centre at once (reflected extension at the walls).

    Agrees with `circle_average` to FFT roundoff at cells at least eps from
    the boundary; nearer cells use the reflected (odd/even) field extension.
    """
    grid = field.grid
    n = grid.n
    if eps < 2.0 * grid.spacing - 1e-12:
        raise ValueError(f"eps={eps} below grid resolution limit")
    F = field.values
    ext = np.empty((2 * n, 2 * n))
    sign = -1.0 if grid.bc == gff.BC_DIRICHLET else 1.0
    ext[:n, :n] = F
    ext[n:, :n] = sign * F[::-1, :]
    ext[:, n:] = sign * ext[:, n - 1::-1]
    conv = sp_fft.irfft2(sp_fft.rfft2(ext) * _kernel_fft(n, float(eps)), s=(2 * n, 2 * n))
    return conv[:n, :n]


def build_quantum_density(field: gff.GridField, gamma: float, eps: float) -> QuantumDensity:
    """Cell masses eps^(gamma^2/2) exp(gamma h_eps(cell)) * cell_area."""
    n = field.grid.n
    if gamma == 0.0:
        masses = np.full((n, n), 1.0 / (n * n))
    else:
        h = grid_circle_averages(field, eps)
        masses = eps ** (gamma * gamma / 2.0) * np.exp(gamma * h) / (n * n)
    return QuantumDensity(field=field, gamma=float(gamma), eps=float(eps), masses=masses)


def sample_quantum_points(density: QuantumDensity, rng: np.random.Generator,
                          size: int) -> np.ndarray:
    """(size, 2) points: cells drawn with probability proportional to mass,
    jittered uniformly inside the cell."""
    cum = density.cumulative()
    n = density.field.grid.n
    u = rng.random(size) * cum[-1]
    flat = np.searchsorted(cum, u, side="right")
    np.clip(flat, 0, n * n - 1, out=flat)
    i, j = np.divmod(flat, n)
    jit = rng.random((size, 2))
    return np.column_stack([(i + jit[:, 0]) / n, (j + jit[:, 1]) / n])


def sample_quantum_point(density: QuantumDensity, rng: np.random.Generator) -> tuple[float, float]:
    pt = sample_quantum_points(density, rng, 1)[0]
    return float(pt[0]), float(pt[1])


def expected_density_check(grid: gff.Grid, gamma: float, eps: float, n_fields: int,
                           seed: int, sites=None, table: gff.GreenTable | None = None,
                           batch: int = 32) -> DensityCheckResult:
    """Ensemble mean of M_eps(z) = eps^(gamma^2/2) e^(gamma h_eps(z)) divided by
    C(z)^(gamma^2/2), per probe site; the ratio is 1 independent of eps."""
    if sites is None:
        sites = [(0.5, 0.5)]
    sites = [tuple(map(float, s)) for s in sites]
    if table is None:
        table = gff.build_green_table(grid)
    if gamma == 0.0:
        k = len(sites)
        return DensityCheckResult(tuple(sites), np.ones(k), np.zeros(k), n_fields)
    H = gff.circle_average_ensemble(grid, sites, [eps], n_fields, seed, batch=batch)[:, :, 0]
    M = eps ** (gamma * gamma / 2.0) * np.exp(gamma * H)
    denom = np.array([gff.conformal_radius_at(table, z) for z in sites]) ** (gamma * gamma / 2.0)
    ratios = M.mean(axis=0) / denom
    stderrs = M.std(axis=0, ddof=1) / math.sqrt(n_fields) / denom
    return DensityCheckResult(tuple(sites), ratios, stderrs, n_fields)
