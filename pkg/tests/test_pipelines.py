import json

import numpy as np
import pytest

from compiv.datagen import IVDataset, generate, preset
from compiv.first_stage import fit_ols
from compiv.lasso import LossSpec
from compiv.logratio import ilr, ilr_inv
from compiv.simplex import diversity
from compiv.pipelines import (
    METHODS,
    UnderIdentifiedError,
    binarize,
    fit_2sls,
    fit_alr_lc,
    fit_diversity_iv,
    fit_from_dict,
    fit_ilr_lc,
    fit_kiv_ilr,
    fit_method,
    fit_to_dict,
    predict_effect,
    two_stage_least_squares,
    with_counts,
)


def _iv_instance(seed, n=200, q=3, d=2):
    r = np.random.default_rng(seed)
    Z = r.standard_normal((n, q))
    U = r.standard_normal(n)
    T = Z @ r.standard_normal((q, d)) + U[:, None] + 0.5 * r.standard_normal((n, d))
    y = 1.0 + T @ r.standard_normal(d) + U
    return Z, T, y


@pytest.mark.parametrize("seed", range(20))
def test_2sls_equals_manual_two_stages(seed):
    Z, T, y = _iv_instance(seed)
    b0, b = two_stage_least_squares(Z, T, y)
    That = fit_ols(Z, T).predict(Z)
    D = np.column_stack([np.ones(len(y)), That])
    manual = np.linalg.lstsq(D, y, rcond=None)[0]
    np.testing.assert_allclose([b0, *b], manual, atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_2sls_just_identified_reduction(seed):
    Z, T, y = _iv_instance(seed, q=2)
    b0, b = two_stage_least_squares(Z, T, y)
    Zd = np.column_stack([np.ones(len(y)), Z])
    Td = np.column_stack([np.ones(len(y)), T])
    np.testing.assert_allclose([b0, *b], np.linalg.solve(Zd.T @ Td, Zd.T @ y), atol=1e-8)


def test_2sls_with_exogenous_treatment_is_ols():
    r = np.random.default_rng(0)
    T = r.standard_normal(100)
    b0, b = two_stage_least_squares(T, T, 2 * T + 1)
    assert b[0] == pytest.approx(2.0, abs=1e-12)
    assert b0 == pytest.approx(1.0, abs=1e-12)


def test_2sls_under_identified():
    Z, T, y = _iv_instance(0, q=1, d=2)
    with pytest.raises(UnderIdentifiedError):
        two_stage_least_squares(Z, T, y)


def test_2sls_ilr_on_noise_free_truth():
    spec = preset("A-p3", seed=0).with_(c_x=[0.0, 0.0], c_y=0.0)
    ds, gt = generate(spec)
    fit = fit_2sls(ds, "ilr")
    np.testing.assert_allclose(fit.beta_log, gt.beta_log, atol=1e-8)
    assert abs(fit.beta_log.sum()) < 1e-12


@pytest.fixture(scope="module")
def a_p3():
    return generate(preset("A-p3", seed=3))


def test_alr_and_ilr_pipelines_agree(a_p3):
    ds, _ = a_p3
    a = fit_ilr_lc(ds, n_resamples=10)
    b = fit_alr_lc(ds, n_resamples=10)
    np.testing.assert_allclose(a.beta_log, b.beta_log, atol=1e-6)
    assert a.intercept == pytest.approx(b.intercept, abs=1e-6)


def test_predict_invariants(a_p3, rng):
    ds, _ = a_p3
    fit = fit_ilr_lc(ds, n_resamples=10)
    x = rng.dirichlet(np.ones(3), size=30)
    f = predict_effect(fit, x)
    np.testing.assert_allclose(predict_effect(fit, 7.5 * x), f, atol=1e-10)
    assert predict_effect(fit, np.full(3, 1 / 3)) == pytest.approx(fit.intercept)
    np.testing.assert_allclose(fit.intercept + ilr(x) @ fit.beta_ilr, f, atol=1e-10)
    with pytest.raises(ValueError):
        predict_effect(fit, [0.5, 0.5, 0.0])


def test_every_method_runs(a_p3):
    ds, _ = a_p3
    small = ds.subset(np.arange(300))
    for name in METHODS:
        kw = {"n_resamples": 10} if name.endswith("LC") else {}
        fit = fit_method(name, small, seed=1, **kw)
        out = predict_effect(fit, small.X[:5])
        assert out.shape == (5,) and np.all(np.isfinite(out))
    with pytest.raises(ValueError, match="unknown method"):
        fit_method("LASSO", small)


@pytest.mark.parametrize("name", ["ILR+LC", "KIV_ILR", "2SLS"])
def test_fit_json_round_trip(a_p3, name):
    ds, _ = a_p3
    small = ds.subset(np.arange(200))
    fit = fit_method(name, small, **({"n_resamples": 10} if name == "ILR+LC" else {}))
    back = fit_from_dict(json.loads(json.dumps(fit_to_dict(fit))))
    np.testing.assert_allclose(predict_effect(back, small.X), predict_effect(fit, small.X), atol=1e-12)


def test_kiv_ilr_diagnostics(a_p3):
    ds, _ = a_p3
    fit = fit_kiv_ilr(ds.subset(np.arange(300)), seed=2)
    assert fit.beta_log is None and not fit.is_linear
    assert set(fit.diagnostics["kernel"]) == {"lam", "xi", "sigma_x", "sigma_z"}


# --------------------------------------------------------------------------
# scalar diversity


def _diversity_dataset(seed, n=2000):
    r = np.random.default_rng(seed)
    z = r.uniform(0, 1, n)
    t = ilr_inv(np.column_stack([2 * z + 0.3 * r.standard_normal(n), 0.1 * r.standard_normal(n)]))
    ds = IVDataset(z[:, None], t, np.zeros(n))
    ds.y = 1.0 + diversity(ds.X, "shannon")
    return ds


def test_diversity_slope_recovered():
    ds = _diversity_dataset(0)
    fit = fit_diversity_iv(ds, "shannon", "2sls")
    assert fit.slope == pytest.approx(1.0, abs=1e-8)
    assert fit.method == "2SLS_scalar:shannon"
    kiv = fit_diversity_iv(ds, "shannon", "kiv")
    assert kiv.slope == pytest.approx(1.0, abs=0.1)


def test_diversity_binary_instrument():
    r = np.random.default_rng(1)
    n = 400
    z = (r.random(n) < 0.5).astype(float)
    counts = r.poisson(np.outer(1 + 4 * z, [1.0, 1.0, 1.0, 1.0]) + np.array([20.0, 1.0, 1.0, 1.0]))
    ds = with_counts(z[:, None], counts, np.zeros(n))
    ds.y = 3.0 - 2.0 * (counts > 0).sum(axis=1)
    fit = fit_diversity_iv(ds, "richness", "2sls")
    assert fit.slope == pytest.approx(-2.0, abs=1e-8)


def test_richness_needs_counts(a_p3):
    ds, _ = a_p3
    with pytest.raises(ValueError, match="counts"):
        fit_diversity_iv(ds, "richness")


# --------------------------------------------------------------------------
# classification


def test_binarize_mean_split():
    np.testing.assert_array_equal(binarize([1, 2, 3, 4]), [-1, -1, 1, 1])


def test_squared_hinge_pipeline(a_p3):
    ds, gt = a_p3
    cls = IVDataset(ds.Z, ds.X, binarize(ds.y))
    fit = fit_ilr_lc(cls, loss=LossSpec("squared_hinge"), n_resamples=10)
    assert fit.loss == "squared_hinge"
    nz = gt.beta_log != 0
    assert np.array_equal(np.sign(fit.beta_log[nz]), np.sign(gt.beta_log[nz]))
    assert set(np.unique(np.sign(predict_effect(fit, ds.X)))) <= {-1.0, 0.0, 1.0}
