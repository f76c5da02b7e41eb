import math

import numpy as np
import pytest
from scipy import integrate, stats

from lqg import brownian
from lqg.analytics import gamma_params, kpz_delta_of_x

SQRT83 = math.sqrt(8.0 / 3.0)


# ---------------------------------------------------------------------------
# density: quadrature oracles
# ---------------------------------------------------------------------------

def test_pdf_normalizes_for_positive_drift():
    for A, a in ((2.0, 1.5), (4.0, 0.40824829046386296), (1.0, 0.25)):
        total, err = integrate.quad(lambda t: brownian.inverse_gaussian_pdf(A, a, t),
                                    0.0, np.inf, limit=200)
        assert err < 1e-8
        assert abs(total - 1.0) < 1e-8


def test_pdf_defective_mass_for_negative_drift():
    for A, a in ((1.0, -1.5), (2.0, -0.5)):
        total, _ = integrate.quad(lambda t: brownian.inverse_gaussian_pdf(A, a, t),
                                  0.0, np.inf, limit=200)
        assert abs(total - math.exp(-2.0 * abs(a) * A)) < 1e-8


def test_pdf_mean_is_A_over_a():
    A, a = 2.0, 1.5
    mean, _ = integrate.quad(lambda t: t * brownian.inverse_gaussian_pdf(A, a, t),
                             0.0, np.inf, limit=200)
    assert abs(mean - A / a) < 1e-8


def test_pdf_matches_scipy_invgauss():
    A, a = 3.0, 1.2
    mu = A / a
    lam = A * A
    ts = np.linspace(0.1, 10.0, 50)
    ours = brownian.inverse_gaussian_pdf(A, a, ts)
    ref = stats.invgauss.pdf(ts, mu / lam, scale=lam)
    assert np.abs(ours - ref).max() < 1e-12


def test_pdf_rejects_bad_arguments():
    with pytest.raises(ValueError):
        brownian.inverse_gaussian_pdf(2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        brownian.inverse_gaussian_pdf(2.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        brownian.inverse_gaussian_pdf(-2.0, 1.0, 1.0)


def test_laplace_transform_identity():
    # integral of exp(-2xt) P_A(t) over t equals exp(-beta(x) A): pure numerics
    rng = np.random.default_rng(0)
    for _ in range(8):
        gamma = rng.uniform(0.3, 1.9)
        x = rng.uniform(0.0, 2.0)
        A = rng.uniform(0.5, 4.0)
        g = gamma_params(gamma)
        beta = kpz_delta_of_x(g, x).beta
        val, _ = integrate.quad(
            lambda t: math.exp(-2.0 * x * t) * brownian.inverse_gaussian_pdf(A, g.a, t),
            0.0, np.inf, limit=200)
        assert abs(val - math.exp(-beta * A)) < 1e-6, (gamma, x, A)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def paths_g1_A2():
    g = gamma_params(1.0)
    T, hit, over = brownian.simulate_stopping_times(g, 2.0, 1e-3, 100.0, 20_000, seed=5)
    return g, T, hit, over


def test_hit_rate_subcritical(paths_g1_A2):
    _, T, hit, _ = paths_g1_A2
    assert hit.mean() >= 0.999


def test_mean_hit_time(paths_g1_A2):
    g, T, hit, _ = paths_g1_A2
    Th = T[hit]
    se = Th.std(ddof=1) / math.sqrt(len(Th))
    assert abs(Th.mean() - 2.0 / g.a) < 3.5 * se + 2e-3


def test_overshoot_bounded(paths_g1_A2):
    _, T, hit, over = paths_g1_A2
    pos = np.maximum(over[hit], 0.0)
    assert pos.mean() <= 4.0 * math.sqrt(1e-3)


def test_martingale_small_matrix(paths_g1_A2):
    g, T, hit, _ = paths_g1_A2
    for x in (0.0, 0.25, 1.0):
        est = brownian.martingale_from_paths(g, x, 2.0, T, hit)
        assert abs(est.value - est.closed_form) <= 4.0 * est.stderr + 1e-4, x


def test_martingale_estimate_wrapper():
    g = gamma_params(SQRT83)
    est = brownian.martingale_estimate(g, 0.5, 2.0, 20_000, 1e-3, None, seed=8)
    closed = math.exp(-kpz_delta_of_x(g, 0.5).beta * 2.0)
    assert abs(est.closed_form - closed) < 1e-15
    assert abs(est.z_score) <= 4.0
    assert 0.0 <= est.value <= 1.0
    assert est.n_paths == 20_000


def test_bridge_correction_dt_stability():
    # halving dt moves the estimate by less than combined noise: bias under control
    g = gamma_params(1.0)
    ests = []
    for dt in (2e-3, 1e-3):
        est = brownian.martingale_estimate(g, 0.25, 2.0, 30_000, dt, 100.0, seed=21)
        assert abs(est.z_score) <= 4.0
        ests.append(est)
    se = math.hypot(ests[0].stderr, ests[1].stderr)
    assert abs(ests[0].value - ests[1].value) <= 4.0 * se


def test_supercritical_hit_rate_and_conditional():
    # gamma=4, A=1: hit rate = delta^(1-4/gamma^2) with delta = e^(-gamma A)
    g = gamma_params(4.0)
    A = 1.0
    T, hit, _ = brownian.simulate_stopping_times(g, A, 1e-3, None, 100_000, seed=6)
    p = hit.mean()
    target = math.exp(-3.0)
    se = math.sqrt(target * (1 - target) / len(hit))
    assert abs(p - target) < 3.5 * se
    # conditional expectation at x=0.25 scales as delta'^(Delta_gamma'(x))
    # with delta' = delta^(4/gamma^2) = e^{-gamma A * 4/gamma^2} = e^{-1}
    est = brownian.martingale_from_paths(g, 0.25, A, T, hit)
    cond = est.value / p
    target_cond = math.exp(-1.0) ** kpz_delta_of_x(gamma_params(1.0), 0.25).delta
    se_cond = est.stderr / p * 2.0
    assert abs(cond - target_cond) < 4.0 * se_cond + 0.01


def test_determinism_and_chunk_independence():
    g = gamma_params(1.0)
    a = brownian.simulate_stopping_times(g, 2.0, 1e-3, 50.0, 200, seed=5)
    b = brownian.simulate_stopping_times(g, 2.0, 1e-3, 50.0, 200, seed=5, workers=4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    # a longer run starts with the same paths (per-path streams)
    c = brownian.simulate_stopping_times(g, 2.0, 1e-3, 50.0, 300, seed=5)
    assert np.array_equal(a[0], c[0][:200])


def test_single_path_api():
    g = gamma_params(1.0)
    s = brownian.simulate_stopping_time(g, 2.0, 1e-3, 100.0, seed=5)
    T, hit, over = brownian.simulate_stopping_times(g, 2.0, 1e-3, 100.0, 1, seed=5)
    assert s.T == T[0] and s.hit == hit[0]
    assert s.A == 2.0 and s.dt == 1e-3


def test_antithetic_flag():
    g = gamma_params(1.0)
    T, hit, _ = brownian.simulate_stopping_times(g, 2.0, 1e-3, 100.0, 2000, seed=9,
                                                 antithetic=True)
    est = brownian.martingale_from_paths(g, 0.25, 2.0, T, hit)
    assert abs(est.z_score) <= 5.0
    # pairs share a stream; mirrored increments give different hit times
    assert not np.array_equal(T[0::2], T[1::2])


def test_simulation_rejects_bad_arguments():
    g = gamma_params(1.0)
    with pytest.raises(ValueError):
        brownian.simulate_stopping_times(g, -1.0, 1e-3, 10.0, 10, seed=0)
    with pytest.raises(ValueError):
        brownian.simulate_stopping_times(g, 1.0, 0.0, 10.0, 10, seed=0)
    with pytest.raises(ValueError):
        brownian.martingale_from_paths(g, -0.5, 1.0, np.ones(3), np.ones(3, dtype=bool))


def test_t_max_cap_reported_as_miss():
    g = gamma_params(SQRT83)  # slow drift
    T, hit, _ = brownian.simulate_stopping_times(g, 6.0, 1e-2, 2.0, 500, seed=3)
    assert (~hit).any()
    assert np.isinf(T[~hit]).all()


# ---------------------------------------------------------------------------
# density fit
# ---------------------------------------------------------------------------

def _samples_from_arrays(g, A, dt, t_max, T, hit):
    return [brownian.StoppingTimeSample(A=A, a=g.a, dt=dt, t_max=t_max, T=t,
                                        hit=bool(h), overshoot=0.0)
            for t, h in zip(T, hit)]


@pytest.fixture(scope="module")
def fit_samples():
    g = gamma_params(1.0)
    A, dt, t_max = 4.0, 2e-4, 200.0
    T, hit, _ = brownian.simulate_stopping_times(g, A, dt, t_max, 20_000, seed=13)
    return g, A, dt, t_max, T, hit


def test_density_fit_ks(fit_samples):
    g, A, dt, t_max, T, hit = fit_samples
    samples = _samples_from_arrays(g, A, dt, t_max, T, hit)
    fit = brownian.density_fit(samples)
    assert fit.n_hit >= 10_000
    assert fit.ks_stat <= 0.015


def test_density_fit_concentration():
    # x-weighted A/T concentrates near a + gamma*Delta = sqrt(a^2+4x) at large A
    g = gamma_params(SQRT83)
    A, dt, t_max = 8.0, 5e-4, 400.0
    T, hit, _ = brownian.simulate_stopping_times(g, A, dt, t_max, 15_000, seed=19)
    fit = brownian.density_fit(_samples_from_arrays(g, A, dt, t_max, T, hit), x=0.5)
    assert abs(fit.target_concentration - math.sqrt(g.a ** 2 + 2.0)) < 1e-12
    assert abs(fit.concentration - fit.target_concentration) < 0.05 * fit.target_concentration


def test_density_fit_mean_of_inverse_time_tends_to_drift():
    # x=0 and large A: A/T piles up at the drift rate a
    g = gamma_params(1.0)
    A, dt, t_max = 12.0, 1e-3, 400.0
    T, hit, _ = brownian.simulate_stopping_times(g, A, dt, t_max, 12_000, seed=23)
    fit = brownian.density_fit(_samples_from_arrays(g, A, dt, t_max, T, hit), x=0.0)
    assert abs(fit.concentration - g.a) < 0.05 * g.a


def test_density_fit_insufficient_samples():
    g = gamma_params(1.0)
    T, hit, _ = brownian.simulate_stopping_times(g, 2.0, 1e-3, 100.0, 50, seed=1)
    with pytest.raises(ValueError):
        brownian.density_fit(_samples_from_arrays(g, 2.0, 1e-3, 100.0, T, hit))


def test_density_fit_rejects_mixed_parameters():
    g = gamma_params(1.0)
    s1 = brownian.StoppingTimeSample(A=2.0, a=g.a, dt=1e-3, t_max=1.0, T=1.0,
                                     hit=True, overshoot=0.0)
    s2 = brownian.StoppingTimeSample(A=3.0, a=g.a, dt=1e-3, t_max=1.0, T=1.0,
                                     hit=True, overshoot=0.0)
    with pytest.raises(ValueError):
        brownian.density_fit([s1, s2] * 6000)


def test_brownian_scaling_consistency():
    # time scaling: T(A, a) ~ c * T'(A/sqrt(c), a*sqrt(c)) with dt' = dt/c
    g1 = gamma_params(1.0)           # a = 1.5
    c = 4.0
    A = 2.0
    T1, h1, _ = brownian.simulate_stopping_times(g1, A, 1e-3, 100.0, 8000, seed=17)
    a2 = g1.a * math.sqrt(c)
    g2 = gamma_params(2.0 / (math.sqrt(a2 * a2 + 4.0) / 2.0 + a2 / 2.0))  # gamma with drift a2
    assert abs(g2.a - a2) < 1e-12
    T2, h2, _ = brownian.simulate_stopping_times(g2, A / math.sqrt(c), 1e-3 / c, 50.0,
                                                 8000, seed=18)
    ks = stats.ks_2samp(T1[h1], c * T2[h2])
    assert ks.statistic < 0.03
