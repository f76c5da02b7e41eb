"""Discrete Gaussian free field on the unit square and its circle averages.

The field lives at the centres of an n x n cell grid.  Sampling is spectral:
unit normals per eigenmode of the combinatorial lattice Laplacian (sine modes
for Dirichlet walls, cosine modes for free walls), scaled so the coefficient
variance is 2*pi / eigenvalue.  With that normalization the covariance of the
sampled field is exactly 2*pi * L^{-1}, whose continuum limit is
-log|z-w| + log C(z; D), so circle averages obey

    Var h_eps(z)                 = -log eps + log C(z; D)
    Var [h_eps(z) - h_eps'(z)]   = |log eps - log eps'|

up to discretization error, i.e. h_{e^{-t}}(z) is a standard Brownian motion
in t.  C(z; D) is the conformal radius of the square, computed here in closed
form through the elliptic map to the half-plane.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy import special

from .seeds import derive_seed

__all__ = [
    "Grid",
    "GridField",
    "GreenTable",
    "CircleAverage",
    "VarianceLawReport",
    "BC_DIRICHLET",
    "BC_FREE",
    "sample_gff",
    "sample_field_batch",
    "circle_average",
    "circle_averages_grid",
    "conformal_radius",
    "build_green_table",
    "variance_law_report",
    "calibrate_green_table",
    "save_field",
    "load_field",
]

TWO_PI = 2.0 * math.pi

BC_DIRICHLET = "dirichlet"
BC_FREE = "free"

# C(center; unit square) = 4*sqrt(pi) / Gamma(1/4)^2, frozen from the exact
# closed form; the sparse-Laplace oracle in the tests reproduces it.
CONFORMAL_RADIUS_CENTER = 0.5393526011883794

# modulus^2 of the elliptic map of the unit square (aspect ratio K'/K = 2)
_SQUARE_MODULUS = 17.0 - 12.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class Grid:
    """Cell grid over the unit square: n cells per side, spacing 1/n."""

    n: int
    bc: str = BC_DIRICHLET

    def __post_init__(self):
        if self.n < 16 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"grid n must be a power of two >= 16, got {self.n}")
        if self.bc not in (BC_DIRICHLET, BC_FREE):
            raise ValueError(f"unknown boundary condition {self.bc!r}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    def cell_centers(self) -> np.ndarray:
        """1-D coordinates of cell centres, shared by both axes."""
        return (np.arange(self.n) + 0.5) / self.n


@dataclass
class GridField:
    """One sampled field: values[i, j] = h((i+1/2)/n, (j+1/2)/n)."""

    grid: Grid
    values: np.ndarray
    seed: int
    _padded: np.ndarray | None = dc_field(default=None, repr=False, compare=False)

    def padded(self) -> np.ndarray:
        """(n+2)^2 array with one ghost rim: odd reflection for Dirichlet walls
        (the wall midpoint interpolates to 0), even reflection for free walls."""
        if self._padded is None:
            self._padded = _pad_with_ghosts(self.values, self.grid.bc)
        return self._padded


@dataclass(frozen=True)
class GreenTable:
    """Conformal radius C(z; D) at every usable cell centre.

    Sites closer than 2*spacing to the boundary are unusable and hold NaN.
    `normalization` is the multiplicative calibration constant absorbed by
    `calibrate_green_table` (1.0 until calibrated).
    """

    grid: Grid
    conformal_radius: np.ndarray
    normalization: float = 1.0


@dataclass(frozen=True)
class CircleAverage:
    z: tuple[float, float]
    eps: float
    value: float


def _pad_with_ghosts(values: np.ndarray, bc: str) -> np.ndarray:
    n = values.shape[0]
    sign = -1.0 if bc == BC_DIRICHLET else 1.0
    out = np.empty((n + 2, n + 2), dtype=values.dtype)
    out[1:-1, 1:-1] = values
    out[0, 1:-1] = sign * values[0, :]
    out[-1, 1:-1] = sign * values[-1, :]
    out[:, 0] = sign * out[:, 1]
    out[:, -1] = sign * out[:, -2]
    return out


@lru_cache(maxsize=16)
def _mode_scale(n: int, bc: str) -> np.ndarray:
    """Per-mode multipliers turning unit normals into transform coefficients."""
    if bc == BC_DIRICHLET:
        m = np.arange(1, n + 1)
        mu1 = 4.0 * np.sin(np.pi * m / (2 * n)) ** 2
        # l2 norm times transform weight: sqrt(2n) except the Nyquist mode
        g = np.where(m < n, math.sqrt(2 * n), math.sqrt(n))
        mu = mu1[:, None] + mu1[None, :]
        return np.sqrt(TWO_PI / mu) / (g[:, None] * g[None, :])
    j = np.arange(n)
    mu1 = 4.0 * np.sin(np.pi * j / (2 * n)) ** 2
    g = np.where(j > 0, math.sqrt(2 * n), math.sqrt(n))
    mu = mu1[:, None] + mu1[None, :]
    mu[0, 0] = np.inf  # constant mode removed; mean fixed to 0 afterwards
    return np.sqrt(TWO_PI / mu) / (g[:, None] * g[None, :])


def _synthesize(coeffs: np.ndarray, bc: str, axes=(-2, -1)) -> np.ndarray:
    if bc == BC_DIRICHLET:
        return sp_fft.dstn(coeffs, type=3, axes=axes)
    out = sp_fft.dctn(coeffs, type=3, axes=axes)
    out -= out.mean(axis=axes, keepdims=True)
    return out


def sample_gff(grid: Grid, seed: int) -> GridField:
    """Sample one Dirichlet free field; bit-identical for identical (grid, seed)."""
    if grid.bc != BC_DIRICHLET:
        raise ValueError("sample_gff needs a Dirichlet grid; use boundary.sample_free_gff")
    return _sample_field(grid, seed)


def _sample_field(grid: Grid, seed: int) -> GridField:
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((grid.n, grid.n))
    values = _synthesize(z * _mode_scale(grid.n, grid.bc), grid.bc)
    return GridField(grid=grid, values=values, seed=int(seed))


def sample_field_batch(grid: Grid, root_seed: int, count: int, start: int = 0) -> np.ndarray:
    """(count, n, n) stack of independent fields; field k uses the derived
    seed (root_seed, start + k), so any batching yields identical members."""
    n = grid.n
    z = np.empty((count, n, n))
    for k in range(count):
        rng = np.random.default_rng(derive_seed(root_seed, start + k))
        z[k] = rng.standard_normal((n, n))
    return _synthesize(z * _mode_scale(n, grid.bc)[None, :, :], grid.bc)


def field_seed_of(root_seed: int, index: int) -> int:
    """Seed of ensemble member `index` under `sample_field_batch`."""
    return derive_seed(root_seed, index)


# ---------------------------------------------------------------------------
# bilinear interpolation and circle averages
# ---------------------------------------------------------------------------

def _bilinear_padded(padded: np.ndarray, n: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    u = xs * n + 0.5  # fractional index into the padded array
    v = ys * n + 0.5
    i0 = np.floor(u).astype(np.intp)
    j0 = np.floor(v).astype(np.intp)
    np.clip(i0, 0, n, out=i0)
    np.clip(j0, 0, n, out=j0)
    fu = u - i0
    fv = v - j0
    return ((1 - fu) * (1 - fv) * padded[i0, j0]
            + fu * (1 - fv) * padded[i0 + 1, j0]
            + (1 - fu) * fv * padded[i0, j0 + 1]
            + fu * fv * padded[i0 + 1, j0 + 1])


def circle_points(eps: float, spacing: float) -> int:
    """Number of quadrature points on a circle of radius eps."""
    return max(64, int(math.ceil(4.0 * math.pi * eps / spacing)))


def circle_average(field: GridField, z: tuple[float, float], eps: float) -> CircleAverage:
    """Average of the field over K points of the circle of radius eps around z.

    Requires eps >= 2*spacing and the closed ball inside the unit square.
    """
    grid = field.grid
    _check_circle(grid, z, eps)
    K = circle_points(eps, grid.spacing)
    th = TWO_PI * np.arange(K) / K
    xs = z[0] + eps * np.cos(th)
    ys = z[1] + eps * np.sin(th)
    val = float(_bilinear_padded(field.padded(), grid.n, xs, ys).mean())
    return CircleAverage(z=(float(z[0]), float(z[1])), eps=float(eps), value=val)


def _check_circle(grid: Grid, z: tuple[float, float], eps: float) -> None:
    tol = 1e-12
    if eps < 2.0 * grid.spacing - tol:
        raise ValueError(f"eps={eps} below grid resolution limit {2 * grid.spacing}")
    x, y = z
    if min(x, y, 1.0 - x, 1.0 - y) < eps - tol:
        raise ValueError(f"circle of radius {eps} around {z} leaves the unit square")


def circle_averages_grid(field: GridField, zs: np.ndarray, eps_ladder: np.ndarray,
                         valid: np.ndarray | None = None) -> np.ndarray:
    """(len(zs), len(eps_ladder)) circle averages; NaN where a circle is not
    resolvable or leaves the domain (per-entry validity, no exception)."""
    grid = field.grid
    n = grid.n
    zs = np.asarray(zs, dtype=float)
    eps_ladder = np.asarray(eps_ladder, dtype=float)
    margins = np.minimum.reduce([zs[:, 0], zs[:, 1], 1.0 - zs[:, 0], 1.0 - zs[:, 1]])
    out = np.full((len(zs), len(eps_ladder)), np.nan)
    padded = field.padded()
    for r, eps in enumerate(eps_ladder):
        if eps < 2.0 * grid.spacing - 1e-12:
            continue
        ok = margins >= eps - 1e-12
        if valid is not None:
            ok = ok & valid[:, r]
        if not ok.any():
            continue
        K = circle_points(eps, grid.spacing)
        th = TWO_PI * np.arange(K) / K
        dx = eps * np.cos(th)
        dy = eps * np.sin(th)
        sel = np.flatnonzero(ok)
        xs = zs[sel, 0][:, None] + dx[None, :]
        ys = zs[sel, 1][:, None] + dy[None, :]
        out[sel, r] = _bilinear_padded(padded, n, xs, ys).mean(axis=1)
    return out


def _interior_stencil(n: int, z: tuple[float, float], eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices and weights of the K-point circle average as one linear
    functional on the unpadded field; only valid away from the ghost rim."""
    K = circle_points(eps, 1.0 / n)
    th = TWO_PI * np.arange(K) / K
    u = (z[0] + eps * np.cos(th)) * n - 0.5
    v = (z[1] + eps * np.sin(th)) * n - 0.5
    i0 = np.floor(u).astype(np.intp)
    j0 = np.floor(v).astype(np.intp)
    if i0.min() < 0 or j0.min() < 0 or i0.max() >= n - 1 or j0.max() >= n - 1:
        raise ValueError("circle touches the ghost rim; use circle_average instead")
    fu = u - i0
    fv = v - j0
    idx = np.concatenate([i0 * n + j0, (i0 + 1) * n + j0, i0 * n + j0 + 1, (i0 + 1) * n + j0 + 1])
    w = np.concatenate([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv]) / K
    return idx, w


def circle_average_ensemble(grid: Grid, zs, eps_list, n_fields: int, seed: int,
                            batch: int = 16) -> np.ndarray:
    """(n_fields, len(zs), len(eps_list)) circle averages over an ensemble of
    independent fields (derived seeds), for interior probe points."""
    zs = [tuple(map(float, z)) for z in zs]
    eps_list = [float(e) for e in eps_list]
    stencils = [[_interior_stencil(grid.n, z, e) for e in eps_list] for z in zs]
    out = np.empty((n_fields, len(zs), len(eps_list)))
    done = 0
    while done < n_fields:
        b = min(batch, n_fields - done)
        fields = sample_field_batch(grid, seed, b, start=done).reshape(b, -1)
        for zi, row in enumerate(stencils):
            for ei, (idx, w) in enumerate(row):
                out[done:done + b, zi, ei] = fields[:, idx] @ w
        done += b
    return out


# ---------------------------------------------------------------------------
# conformal radius of the unit square
# ---------------------------------------------------------------------------

def _jacobi_complex(xr: np.ndarray, yi: np.ndarray, m: float):
    """sn, cn, dn at u = xr + i*yi from real-argument values (addition rules)."""
    s, c, d, _ = special.ellipj(xr, m)
    s1, c1, d1, _ = special.ellipj(yi, 1.0 - m)
    den = c1 * c1 + m * (s * s1) ** 2
    sn = (s * d1 + 1j * (c * d * s1 * c1)) / den
    cn = (c * c1 - 1j * (s * d * s1 * d1)) / den
    dn = (d * c1 * d1 - 1j * m * (s * c * s1)) / den
    return sn, cn, dn


def conformal_radius(x, y):
    """C(z; unit square) via z -> sn(2Kz - K) onto the half-plane.

    C = 2 Im(w) / |dw/dz| evaluated at w = sn; vectorized over x, y.
    """
    m = _SQUARE_MODULUS
    K = special.ellipk(m)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sn, cn, dn = _jacobi_complex(K * (2.0 * x - 1.0), 2.0 * K * y, m)
    return sn.imag / (K * np.abs(cn * dn))


def build_green_table(grid: Grid) -> GreenTable:
    """Tabulate C(z; D) at all cell centres; NaN within 2*spacing of the wall.

    The table is made bitwise symmetric under the dihedral symmetries of the
    square by evaluating one fundamental wedge and mirroring it.
    """
    if grid.bc != BC_DIRICHLET:
        raise ValueError("Green table is defined for the Dirichlet field")
    n = grid.n
    c = grid.cell_centers()
    full = conformal_radius(c[:, None], c[None, :])
    ii, jj = np.indices((n, n))
    a = np.minimum(ii, n - 1 - ii)
    b = np.minimum(jj, n - 1 - jj)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    sym = full[lo, hi]
    edge = np.minimum(c, 1.0 - c)
    dist = np.minimum(edge[:, None], edge[None, :])
    sym = np.where(dist < 2.0 * grid.spacing - 1e-12, np.nan, sym)
    return GreenTable(grid=grid, conformal_radius=sym)


def conformal_radius_at(table: GreenTable, z: tuple[float, float]) -> float:
    """Table value at the cell containing z; NaN if the site is unusable."""
    n = table.grid.n
    i = min(max(int(z[0] * n), 0), n - 1)
    j = min(max(int(z[1] * n), 0), n - 1)
    return float(table.conformal_radius[i, j])


# ---------------------------------------------------------------------------
# variance-law measurement (Brownian in -log eps)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceLawReport:
    """Ensemble variance measurements for circle averages.

    var_probe[p, e] is the (known-mean-zero) ensemble variance of h_eps at
    probe p; pair_var[i, j] the variance of h_eps_j - h_eps_i at probe 0.
    slope is the pooled increment estimate of d Var / d(-log eps).
    """

    eps: tuple[float, ...]
    probes: tuple[tuple[float, float], ...]
    var_probe: np.ndarray
    pair_var: np.ndarray
    slope: float
    slope_stderr: float
    intercept_residual: float
    n_fields: int


def default_probe_points(margin: float = 0.25, per_side: int = 5) -> list[tuple[float, float]]:
    xs = np.linspace(margin, 1.0 - margin, per_side)
    return [(float(a), float(b)) for a in xs for b in xs]


def variance_law_report(grid: Grid, eps_list, n_fields: int, seed: int,
                        probes=None, table: GreenTable | None = None) -> VarianceLawReport:
    """Measure Var h_eps over an ensemble and fit the Brownian slope.

    The slope is estimated from increments between adjacent scales pooled
    over all probes (the increments are independent across scales, which is
    what makes this estimator tight); its stderr comes from the field-to-field
    spread of the pooled per-field statistic.
    """
    eps_list = sorted(float(e) for e in eps_list)          # ascending eps
    eps_desc = list(reversed(eps_list))                    # coarse -> fine in t = -log eps
    if probes is None:
        probes = default_probe_points()
    H = circle_average_ensemble(grid, probes, eps_desc, n_fields, seed)
    # H[:, p, k] at eps_desc[k]; t_k = -log eps increases with k
    var_probe = (H ** 2).mean(axis=0)
    h0 = H[:, 0, :]
    pair_var = np.array([[float(((h0[:, j] - h0[:, i]) ** 2).mean())
                          for j in range(len(eps_desc))] for i in range(len(eps_desc))])
    dt = np.diff([-math.log(e) for e in eps_desc])
    incr = np.diff(H, axis=2)
    per_field = (incr ** 2).sum(axis=(1, 2)) / (len(probes) * dt.sum())
    slope = float(per_field.mean())
    slope_se = float(per_field.std(ddof=1) / math.sqrt(n_fields))
    if table is None:
        table = build_green_table(grid)
    resid = 0.0
    cnt = 0
    for p, z in enumerate(probes):
        cz = conformal_radius_at(table, z)
        if not math.isfinite(cz):
            continue
        for k, e in enumerate(eps_desc):
            resid += var_probe[p, k] - (-math.log(e) + math.log(cz))
            cnt += 1
    return VarianceLawReport(
        eps=tuple(eps_desc),
        probes=tuple(probes),
        var_probe=var_probe,
        pair_var=pair_var,
        slope=slope,
        slope_stderr=slope_se,
        intercept_residual=resid / max(cnt, 1),
        n_fields=n_fields,
    )


def calibrate_green_table(table: GreenTable, n_fields: int, seed: int,
                          eps_list=(1 / 8, 1 / 16, 1 / 32, 1 / 64)) -> tuple[GreenTable, VarianceLawReport]:
    """Absorb the residual additive constant of the measured variance law into
    the table's `normalization` (multiplicative on C)."""
    rep = variance_law_report(table.grid, eps_list, n_fields, seed, table=table)
    return replace(table, normalization=math.exp(rep.intercept_residual)), rep


# ---------------------------------------------------------------------------
# binary field dump (cache interface)
# ---------------------------------------------------------------------------

_FIELD_MAGIC = b"LQGF"
_BC_CODES = {BC_DIRICHLET: 0, BC_FREE: 1}
_BC_NAMES = {v: k for k, v in _BC_CODES.items()}


def save_field(field: GridField, path) -> None:
    """Row-major float64 dump with a (magic, n, bc, seed) header."""
    header = _FIELD_MAGIC + struct.pack("<IBq", field.grid.n, _BC_CODES[field.grid.bc],
                                        field.seed)
    Path(path).write_bytes(header + np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def load_field(path) -> GridField:
    raw = Path(path).read_bytes()
    if raw[:4] != _FIELD_MAGIC:
        raise ValueError(f"{path}: not a field dump")
    n, bc_code, seed = struct.unpack("<IBq", raw[4:4 + 13])
    values = np.frombuffer(raw[17:], dtype="<f8").reshape(n, n).copy()
    return GridField(grid=Grid(n=n, bc=_BC_NAMES[bc_code]), values=values, seed=seed)
