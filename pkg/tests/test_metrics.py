import json

import numpy as np
import pytest

from compiv.datagen import generate, interventional_sample, preset, true_effect
from compiv.metrics import benchmark, beta_mse, evaluate, mean_se, oos_mse, support_errors
from compiv.pipelines import CausalFit, fit_2sls


@pytest.fixture(scope="module")
def a_p3():
    spec = preset("A-p3", seed=4)
    ds, gt = generate(spec)
    return spec, ds, gt, interventional_sample(spec)


def _oracle_fit(gt):
    return CausalFit("oracle", gt.p, 2, 0, intercept=gt.beta0 + gt.oracle_const, beta_log=gt.beta_log.copy())


def test_oos_mse_of_truth_is_zero(a_p3):
    _, _, gt, xs = a_p3
    assert oos_mse(_oracle_fit(gt), gt, xs) == pytest.approx(0.0, abs=1e-20)


def test_oos_mse_of_constant_is_variance(a_p3):
    _, _, gt, xs = a_p3
    t = true_effect(gt, xs)
    const = CausalFit("const", 3, 2, 0, intercept=float(t.mean()), beta_log=np.zeros(3))
    assert oos_mse(const, gt, xs) == pytest.approx(t.var(), rel=1e-12)


def test_oos_mse_order_invariant(a_p3, rng):
    _, ds, gt, xs = a_p3
    fit = fit_2sls(ds, "raw")
    perm = rng.permutation(len(xs))
    assert oos_mse(fit, gt, xs[perm]) == pytest.approx(oos_mse(fit, gt, xs), rel=1e-14)


def test_beta_mse():
    assert beta_mse([1, -1, 0], [0, 0, 0]) == pytest.approx(2 / 3)
    assert beta_mse([2, -1, -1], [2, -1, -1]) == 0.0
    with pytest.raises(ValueError, match="sum to zero"):
        beta_mse([1, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError, match="length"):
        beta_mse([1, -1], [0, 0, 0])


def test_support_errors():
    assert support_errors([0.9, 0.2, -1.1, 0], [1, 0, -1, 0]) == (0, 1)
    b = np.array([10, 5, 5, 5, -10, -5, -5, -5, 0, 0], dtype=float)
    assert support_errors(b, b) == (0, 0)
    assert support_errors(np.zeros(10), b) == (8, 0)
    assert support_errors([1e-9, -1e-9], [1, -1]) == (2, 0)


def test_evaluate_omits_coefficient_metrics_for_nonlinear(a_p3):
    _, ds, gt, xs = a_p3
    rep = evaluate(fit_2sls(ds, "raw"), gt, xs)
    assert rep.beta_mse is None and rep.fz is None
    assert rep.n_interventions == 250
    rep = evaluate(fit_2sls(ds, "ilr"), gt, xs)
    assert rep.beta_mse is not None and len(rep.f_stats) == 2


def test_mean_se_two_pass():
    v = [0.3, 1.7, 2.2, 0.9, 5.0]
    m, se = mean_se(v)
    mean = sum(v) / len(v)
    direct = (sum((x - mean) ** 2 for x in v) / (len(v) - 1)) ** 0.5 / len(v) ** 0.5
    assert m == pytest.approx(mean, abs=1e-12)
    assert se == pytest.approx(direct, abs=1e-12)


def test_benchmark_rejects_single_seed():
    with pytest.raises(ValueError, match="at least 2"):
        benchmark([preset("A-p3")], ["2SLS"], 1)


def test_benchmark_deterministic_and_shaped():
    specs = [preset("A-p3", n=300)]
    methods = ["2SLS", "2SLS_ILR"]
    a = benchmark(specs, methods, 3)
    b = benchmark(specs, methods, 3)
    assert a.to_jsonl() == b.to_jsonl()
    assert len(a.records) == 6
    assert a.to_csv().splitlines()[0].startswith("scenario,method,n_ok")
    cell = a.cell("A-p3", "2SLS_ILR")
    assert cell["n_ok"] == 3 and cell["beta_mse"] is not None
    assert a.cell("A-p3", "2SLS")["beta_mse"] is None
    for line in a.to_jsonl().splitlines():
        json.loads(line)


def test_benchmark_failure_row_for_underidentified():
    spec = preset("B-diversity", n=200)
    res = benchmark([spec], ["2SLS_ILR"], 2)
    cell = res.cell("B-diversity", "2SLS_ILR")
    assert cell["n_failed"] == 2 and cell["oos_mse"] is None
    assert "failed" in res.to_text()
    assert all("UnderIdentifiedError" in r["error"] for r in res.records)
