"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Heavy Monte Carlo artifacts (path ensembles, field ensembles) are shared
through session fixtures.  Run with `pytest tests/test_acceptance.py -v -s`
to see the per-criterion lines; LQG_THREADS (or --workers) sets the pool.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from lqg import boundary, brownian, fractal, gff, measure
from lqg.analytics import (duality_report, gamma_of_central_charge, gamma_params,
                           kpz_delta_of_x, kpz_x_of_delta)
from lqg.config import ExperimentConfig
from lqg.harness import run

pytestmark = pytest.mark.acceptance

SQRT2 = math.sqrt(2.0)
SQRT83 = math.sqrt(8.0 / 3.0)

MATRIX_GAMMAS = (1.0, SQRT2, SQRT83)
MATRIX_XS = (0.0, 0.25, 0.5, 1.0)
MATRIX_AS = (2.0, 4.0)
N_PATHS = 100_000
DT = 1e-4


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. analytic KPZ suite
# ---------------------------------------------------------------------------

def test_criterion_1_analytic_suite():
    t0 = time.time()
    rng = np.random.default_rng(2026)
    worst_round = 0.0
    worst_resid = 0.0
    for _ in range(1000):
        gamma = rng.uniform(0.1, 4.0)
        x = rng.uniform(0.0, 10.0)
        g = gamma_params(gamma)
        se = kpz_delta_of_x(g, x)
        worst_round = max(worst_round,
                          abs(kpz_x_of_delta(g, se.delta) - x) / max(1.0, x))
        worst_resid = max(worst_resid, duality_report(g, x).max_residual)
    gv = (abs(gamma_of_central_charge(0.0) - SQRT83),
          abs(gamma_of_central_charge(0.5) - math.sqrt(3.0)),
          abs(gamma_of_central_charge(1.0) - 2.0))
    elapsed = time.time() - t0
    ok = (worst_round <= 1e-12 and worst_resid <= 1e-10
          and max(gv) <= 1e-12 and elapsed < 1.0)
    report("criterion 1 (analytic KPZ suite)",
           ok, f"roundtrip {worst_round:.2e}, residuals {worst_resid:.2e}, "
               f"gamma(c) {max(gv):.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2/3. martingale identity and first-passage density
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def path_matrix(workers):
    """Shared hit-time ensembles for every (gamma, A) of the acceptance matrix."""
    sims = {}
    for gi, gamma in enumerate(MATRIX_GAMMAS):
        g = gamma_params(gamma)
        for ai, A in enumerate(MATRIX_AS):
            T, hit, _ = brownian.simulate_stopping_times(
                g, A, DT, None, N_PATHS, seed=9000 + 10 * gi + ai, workers=workers)
            sims[(gamma, A)] = (g, T, hit)
    return sims


def test_criterion_2_martingale_matrix(path_matrix):
    within3 = 0
    worst = 0.0
    cells = 0
    for (gamma, A), (g, T, hit) in path_matrix.items():
        for x in MATRIX_XS:
            est = brownian.martingale_from_paths(g, x, A, T, hit)
            z = abs(est.z_score)
            cells += 1
            if z <= 3.0:
                within3 += 1
            worst = max(worst, z)
    ok = within3 >= 22 and worst <= 4.0
    report("criterion 2 (martingale identity, 24 cells)",
           ok, f"{within3}/24 within 3 SE, worst |z| = {worst:.2f}")


def test_criterion_3_first_passage_density(path_matrix):
    g, T, hit = path_matrix[(1.0, 4.0)]
    samples = [brownian.StoppingTimeSample(A=4.0, a=g.a, dt=DT, t_max=math.inf,
                                           T=t, hit=bool(h), overshoot=0.0)
               for t, h in zip(T, hit)]
    fit = brownian.density_fit(samples)
    rng = np.random.default_rng(77)
    worst_lap = 0.0
    for _ in range(20):
        gamma = rng.uniform(0.3, 1.9)
        x = rng.uniform(0.0, 2.0)
        A = rng.uniform(0.5, 4.0)
        gp = gamma_params(gamma)
        beta = kpz_delta_of_x(gp, x).beta
        val, _ = integrate.quad(
            lambda t: math.exp(-2.0 * x * t) * brownian.inverse_gaussian_pdf(A, gp.a, t),
            0.0, np.inf, limit=200)
        worst_lap = max(worst_lap, abs(val - math.exp(-beta * A)))
    ok = fit.ks_stat <= 0.01 and worst_lap <= 1e-6
    report("criterion 3 (first-passage density)",
           ok, f"KS = {fit.ks_stat:.4f} (n={fit.n_hit}), "
               f"Laplace residual {worst_lap:.2e} over 20 pairs")


# ---------------------------------------------------------------------------
# 4. singular regime / duality
# ---------------------------------------------------------------------------

def test_criterion_4_duality(workers):
    g = gamma_params(4.0)
    A = 1.0
    T, hit, _ = brownian.simulate_stopping_times(g, A, 1e-3, None, 1_000_000,
                                                 seed=404, workers=workers)
    p = float(hit.mean())
    target_p = math.exp(-3.0)  # delta^(1-4/gamma^2), delta = e^{-gamma A}
    se_p = math.sqrt(target_p * (1.0 - target_p) / len(hit))
    ok_p = abs(p - target_p) <= 3.0 * se_p
    details = [f"hit rate {p:.5f} vs {target_p:.5f} ({abs(p - target_p) / se_p:.2f} SE)"]
    ok_cond = True
    gd = gamma_params(1.0)  # dual of 4
    delta_prime = math.exp(-4.0 * A * 4.0 / 16.0)  # delta^(4/gamma^2) = e^{-1}
    for x in (0.25, 1.0):
        est = brownian.martingale_from_paths(g, x, A, T, hit)
        cond = est.value / p
        target = delta_prime ** kpz_delta_of_x(gd, x).delta
        # stderr of the ratio: dominated by the numerator spread over hits
        se = est.stderr / p + abs(cond) * se_p / p
        zz = abs(cond - target) / se
        ok_cond &= zz <= 3.0
        details.append(f"x={x}: cond {cond:.5f} vs {target:.5f} ({zz:.2f} SE)")
    report("criterion 4 (gamma=4 duality)", ok_p and ok_cond, "; ".join(details))


# ---------------------------------------------------------------------------
# 5. GFF laws
# ---------------------------------------------------------------------------

GFF_SEED = 1302


def test_criterion_5_gff_laws():
    grid = gff.Grid(1024)
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    rep = gff.variance_law_report(grid, eps, 500, seed=GFF_SEED)
    pair_ok = True
    worst_pair = 0.0
    for i in range(len(eps)):
        for j in range(i + 1, len(eps)):
            target = abs(math.log(rep.eps[i] / rep.eps[j]))
            dev = abs(rep.pair_var[i, j] - target) / target
            worst_pair = max(worst_pair, dev)
            pair_ok &= dev <= 0.05
    slope_ok = abs(rep.slope - 1.0) <= 0.02
    # boundary: free field semicircle variance slope = 2 within 10 percent
    bgrid = gff.Grid(1024, bc="free")
    bprobes = [0.3, 0.4, 0.5, 0.6, 0.7]
    nf = 500
    H = np.zeros((nf, len(bprobes), len(eps)))
    for k in range(nf):
        f = boundary.sample_free_gff(bgrid, gff.field_seed_of(GFF_SEED + 1, k))
        for p, x0 in enumerate(bprobes):
            for e, ee in enumerate(eps):
                H[k, p, e] = boundary.semicircle_average(f, (x0, 0.0), ee)
    incr = np.diff(H, axis=2)
    spans = np.diff([-math.log(e) for e in eps]).sum()
    bslope = float((incr ** 2).sum(axis=(1, 2)).mean() / (len(bprobes) * spans))
    bslope_ok = abs(bslope - 2.0) <= 0.2
    ok = pair_ok and slope_ok and bslope_ok
    report("criterion 5 (GFF variance laws, n=1024, 500 fields)",
           ok, f"worst pair dev {worst_pair * 100:.1f}% (<=5%), "
               f"slope {rep.slope:.4f}+-{rep.slope_stderr:.4f} (1.00+-0.02), "
               f"boundary slope {bslope:.3f} (2.0+-0.2)")


# ---------------------------------------------------------------------------
# 6. measure law
# ---------------------------------------------------------------------------

def test_criterion_6_measure_law():
    grid = gff.Grid(512)
    gamma = 1.0
    eps_pair = [1 / 16, 1 / 64]
    H = gff.circle_average_ensemble(grid, [(0.5, 0.5)], eps_pair, 10_000,
                                    seed=606, batch=64)[:, 0, :]
    M = np.exp(gamma * H) * np.array(eps_pair) ** (gamma * gamma / 2.0)
    target = gff.CONFORMAL_RADIUS_CENTER ** (gamma * gamma / 2.0)
    m1, m2 = M.mean(axis=0)
    diff = M[:, 0] - M[:, 1]
    se_diff = diff.std(ddof=1) / math.sqrt(len(diff))
    agree = abs(diff.mean()) <= 3.0 * se_diff
    dev1 = abs(m1 - target) / target
    dev2 = abs(m2 - target) / target
    ok = agree and dev1 <= 0.05 and dev2 <= 0.05
    report("criterion 6 (exponential-expectation law, n=512, 1e4 fields)",
           ok, f"mean M at eps=1/16: {m1:.4f}, eps=1/64: {m2:.4f}, "
               f"target C^0.5 = {target:.4f}; diff {diff.mean():+.4f} "
               f"(3 SE = {3 * se_diff:.4f}); devs {dev1 * 100:.1f}%, {dev2 * 100:.1f}%")


# ---------------------------------------------------------------------------
# 7. empirical KPZ
# ---------------------------------------------------------------------------

KPZ_SEED = 707


@pytest.fixture(scope="session")
def kpz_masks():
    grid = gff.Grid(1024)
    return (fractal.make_fractal("segment", grid), fractal.make_fractal("point", grid))


def test_criterion_7_empirical_kpz(kpz_masks, workers):
    segment, point = kpz_masks
    details = []
    ok = True
    for gamma in (0.5, 1.0):
        est, diag = fractal.quantum_exponent(
            segment, gamma, n_fields=200, n_points=50, seed=KPZ_SEED,
            workers=workers)
        th = kpz_delta_of_x(gamma_params(gamma), 0.5).delta
        dev = abs(est.exponent - th)
        ok &= dev <= 0.1
        details.append(f"segment g={gamma}: {est.exponent:.4f}+-{est.stderr:.4f} "
                       f"vs {th:.4f} (|d|={dev:.3f}, {dev / est.stderr:.1f} SE)")
    for gamma in (0.5, 1.0):
        est, diag = fractal.quantum_exponent(
            point, gamma, n_fields=200, n_points=100, seed=KPZ_SEED + 1,
            eps_max=fractal.default_eps_max("point"), workers=workers)
        dev = abs(est.exponent - 1.0)
        ok &= dev <= 0.1
        details.append(f"point g={gamma}: {est.exponent:.4f}+-{est.stderr:.4f} "
                       f"vs 1.0 (|d|={dev:.3f})")
    # reported, not gated: gamma near 2 where estimator variance blows up
    est, _ = fractal.quantum_exponent(segment, SQRT83, n_fields=200, n_points=50,
                                      seed=KPZ_SEED + 2, workers=workers)
    th = kpz_delta_of_x(gamma_params(SQRT83), 0.5).delta
    details.append(f"[reported only] segment g=sqrt(8/3): {est.exponent:.4f}"
                   f"+-{est.stderr:.4f} vs {th:.4f}")
    report("criterion 7 (empirical KPZ, n=1024)", ok, "; ".join(details))


# ---------------------------------------------------------------------------
# 8. determinism across worker counts
# ---------------------------------------------------------------------------

def _micro_configs(base_out):
    return [
        ExperimentConfig(experiment="kpz-table", gamma_list=[1.0, SQRT83],
                         x_list=[0.0, 0.5, 1.0], output_dir=base_out),
        ExperimentConfig(experiment="gff-stats", grid_n=64, n_fields=30,
                         eps_list=[1 / 8, 1 / 16], seed=8, output_dir=base_out),
        ExperimentConfig(experiment="measure-scan", grid_n=64, gamma_list=[1.0],
                         delta_list=[1e-2, 1e-3], n_points=20, seed=8,
                         output_dir=base_out),
        ExperimentConfig(experiment="fpt-run", gamma_list=[1.0], x_list=[0.0, 0.5],
                         A_list=[2.0], dt=1e-3, n_paths=2000, seed=8,
                         output_dir=base_out),
        ExperimentConfig(experiment="kpz-verify", grid_n=128, gamma_list=[1.0],
                         mask_kind="segment", delta_list=[3e-2, 1e-2, 3e-3, 1e-3],
                         n_fields=12, n_points=80, seed=8, output_dir=base_out),
        ExperimentConfig(experiment="boundary-verify", grid_n=256, gamma_list=[1.0],
                         mask_kind="point", delta_list=[1.6e-1, 6e-2, 2.4e-2, 9.5e-3],
                         n_fields=12, n_points=60, seed=8, output_dir=base_out),
    ]


def test_criterion_8_determinism(tmp_path, monkeypatch):
    digests = {}
    for nw in ("1", "2", "8"):
        monkeypatch.setenv("LQG_THREADS", nw)
        for cfg in _micro_configs(str(tmp_path / f"w{nw}")):
            cfg.output_dir = str(tmp_path / f"w{nw}" / cfg.experiment)
            manifest = run(cfg)
            for f in manifest.files:
                key = (cfg.experiment, f["name"])
                digests.setdefault(key, set()).add(f["sha256"])
    bad = [k for k, v in digests.items() if len(v) != 1]
    report("criterion 8 (worker-count determinism)",
           not bad, f"{len(digests)} result files identical across workers 1/2/8"
                    + (f"; MISMATCH {bad}" if bad else ""))
