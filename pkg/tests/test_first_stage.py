import mpmath
import numpy as np
import pytest
from scipy.special import digamma, gammaln
from scipy.stats import dirichlet

from compiv.first_stage import (
    DirichletConvergenceError,
    RankDeficientError,
    dirichlet_loglik,
    first_stage_f_stats,
    fit_dirichlet_glm,
    fit_dirichlet_mle,
    fit_kiv,
    fit_ols,
    median_bandwidth,
)


def test_ols_noiseless_recovery(rng):
    Z = rng.standard_normal((50, 3))
    A = rng.standard_normal((3, 2))
    b = np.array([1.0, -2.0])
    fit = fit_ols(Z, Z @ A + b)
    np.testing.assert_allclose(fit.coef, A, atol=1e-8)
    np.testing.assert_allclose(fit.intercept, b, atol=1e-8)


def test_ols_residuals_orthogonal(rng):
    Z = rng.uniform(0, 1, (300, 4))
    T = rng.standard_normal((300, 3)) + Z[:, :3]
    R = T - fit_ols(Z, T).predict(Z)
    assert np.abs(Z.T @ R).max() < 1e-6
    assert np.abs(R.mean(axis=0)).max() < 1e-8


def test_ols_univariate_slope(rng):
    z = rng.standard_normal(200)
    t = 0.7 * z + rng.standard_normal(200)
    slope = fit_ols(z, t).coef[0, 0]
    assert slope == pytest.approx(np.cov(z, t)[0, 1] / np.var(z, ddof=1), abs=1e-10)


def test_ols_rank_deficiency_names_columns(rng):
    z = rng.standard_normal(40)
    Z = np.column_stack([z, 2 * z, rng.standard_normal(40)])
    with pytest.raises(RankDeficientError, match="z_1.*z_2"):
        fit_ols(Z, rng.standard_normal(40))


def test_f_stat_on_noise_is_calibrated():
    rejections = 0
    for s in range(200):
        r = np.random.default_rng(s)
        F = first_stage_f_stats(r.standard_normal((100, 2)), r.standard_normal(100))
        rejections += F[0] > 3.09  # F(2, 97) 95% quantile
    assert 0.01 < rejections / 200 < 0.10


def test_f_stat_matches_textbook(rng):
    Z = rng.standard_normal((80, 2))
    t = Z @ [0.5, 0.2] + rng.standard_normal(80)
    D = np.column_stack([np.ones(80), Z])
    rss1 = np.sum((t - D @ np.linalg.lstsq(D, t, rcond=None)[0]) ** 2)
    rss0 = np.sum((t - t.mean()) ** 2)
    assert first_stage_f_stats(Z, t)[0] == pytest.approx(((rss0 - rss1) / 2) / (rss1 / 77))


# --------------------------------------------------------------------------
# Dirichlet


def test_special_functions_against_mpmath():
    pts = np.concatenate([np.geomspace(1e-3, 1e3, 15), [0.5, 1.0, 2.5, 7.25, 31.0]])
    for x in pts:
        assert gammaln(x) == pytest.approx(float(mpmath.loggamma(x)), rel=1e-13, abs=1e-14)
        assert digamma(x) == pytest.approx(float(mpmath.digamma(x)), rel=1e-13, abs=1e-14)


def test_loglik_matches_scipy(rng):
    alpha = rng.uniform(0.5, 5, (10, 4))
    X = np.array([rng.dirichlet(a) for a in alpha])
    ours = dirichlet_loglik(alpha, X)
    ref = [dirichlet.logpdf(x, a) for x, a in zip(X, alpha)]
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-8)


def test_dirichlet_mle(rng):
    a = np.array([2.0, 5.0, 1.0])
    X = rng.dirichlet(a, size=20000)
    np.testing.assert_allclose(fit_dirichlet_mle(X), a, rtol=0.05)


def _dirichlet_data(seed, n=5000):
    r = np.random.default_rng(seed)
    Z = r.uniform(0, 1, (n, 2))
    w0 = np.array([1.0, 1.5, 0.5])
    W = np.array([[1.0, -0.5, 0.0], [0.0, 0.8, -1.0]])
    X = np.array([r.dirichlet(a) for a in np.exp(w0 + Z @ W)])
    return Z, X, w0, W


@pytest.mark.slow
def test_dirichlet_glm_recovers_parameters():
    errs = []
    for s in range(10):
        Z, X, w0, W = _dirichlet_data(s)
        errs.append(np.abs(fit_dirichlet_glm(Z, X).omega - W).mean())
    assert np.mean(errs) < 0.1


def test_dirichlet_glm_heavy_penalty_kills_slopes():
    Z, X, *_ = _dirichlet_data(0, n=800)
    g = fit_dirichlet_glm(Z, X, lambda_grid=(1e6,))
    assert np.all(g.omega == 0)
    m = g.predict_mean(np.array([[0.0, 0.0], [1.0, 1.0], [50.0, -20.0]]))
    np.testing.assert_allclose(m, np.broadcast_to(m[0], m.shape), atol=1e-14)


def test_dirichlet_glm_means_are_compositions():
    Z, X, *_ = _dirichlet_data(1, n=500)
    g = fit_dirichlet_glm(Z, X)
    m = g.predict_mean(np.array([[1e3, -1e3], [0.3, 0.2]]))
    assert np.all(m >= 0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert "bic_by_lambda" in g.diagnostics
    assert np.isfinite(g.bic)


def test_dirichlet_non_convergence_carries_best():
    Z, X, *_ = _dirichlet_data(2, n=500)
    with pytest.raises(DirichletConvergenceError) as info:
        fit_dirichlet_glm(Z, X, lambda_grid=(0.1,), max_iter=2, tol=0.0)
    assert info.value.best.omega.shape == (2, 3)
    assert info.value.diagnostics["n_iter"] == 2


def test_dirichlet_init_falls_back_without_small_z(rng):
    Z = rng.uniform(5, 6, (300, 1))
    X = rng.dirichlet([2.0, 3.0, 4.0], size=300)
    g = fit_dirichlet_glm(Z, X)
    assert g.diagnostics["init"] == "moments-all"


# --------------------------------------------------------------------------
# kernel IV


def _linear_iv(seed, n=1000):
    r = np.random.default_rng(seed)
    z = r.standard_normal(n)
    u = r.standard_normal(n)
    x = z + 0.3 * u + 0.1 * r.standard_normal(n)
    y = 2 * x + 0.5 * u + 0.1 * r.standard_normal(n)
    return z, x, y


def test_kiv_constant_outcome():
    z, x, _ = _linear_iv(0, 400)
    kf = fit_kiv(z, x, np.full(400, 3.5))
    np.testing.assert_allclose(kf.predict(np.linspace(-2, 2, 20)), 3.5, atol=1e-3)


def test_kiv_tracks_linear_truth():
    mses = []
    for s in range(5):
        z, x, y = _linear_iv(s)
        kf = fit_kiv(z, x, y)
        assert (kf.n, kf.m) == (500, 500)
        q = np.linspace(*np.percentile(x, [25, 75]), 50)
        mses.append(np.mean((kf.predict(q) - 2 * q) ** 2))
    assert np.mean(mses) < 0.05


def test_kiv_heavy_regularisation_gives_mean():
    z, x, y = _linear_iv(1, 400)
    kf = fit_kiv(z, x, y, lam=1e6, xi=1e6)
    np.testing.assert_allclose(kf.predict(np.linspace(-2, 2, 10)), kf.offset, atol=1e-2)


def test_kiv_handles_duplicates():
    z, x, y = _linear_iv(2, 200)
    z, x, y = np.tile(z, 2), np.tile(x, 2), np.tile(y, 2)
    kf = fit_kiv(z, x, y, lam=1e-6, xi=1e-6)
    assert np.all(np.isfinite(kf.dual_weights))


def test_kiv_deterministic_and_seeded():
    z, x, y = _linear_iv(3, 300)
    a = fit_kiv(z, x, y, split_seed=4)
    b = fit_kiv(z, x, y, split_seed=4)
    np.testing.assert_array_equal(a.dual_weights, b.dual_weights)
    assert a.sigma_x > 0 and a.sigma_z > 0


def test_median_bandwidth():
    pts = np.array([[0.0], [1.0], [3.0]])
    assert median_bandwidth(pts) == 2.0
