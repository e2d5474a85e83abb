"""Evaluation of fitted causal effects against simulated ground truth.

``oos_mse`` compares the fitted effect with the interventional mean on fresh
treatments; ``beta_mse`` and ``support_errors`` compare log-contrast
coefficients. :func:`benchmark` runs methods over scenarios and seeds and
aggregates mean and standard error per cell.
"""

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import SimulationSpec, generate, interventional_sample, true_effect
from .pipelines import fit_method, predict_effect

__all__ = [
    "MetricsReport",
    "oos_mse",
    "beta_mse",
    "support_errors",
    "evaluate",
    "BenchmarkResult",
    "benchmark",
    "mean_se",
]

log = logging.getLogger(__name__)

ZERO_TOL = 1e-8


@dataclass
class MetricsReport:
    oos_mse: float
    beta_mse: float | None = None
    fz: int | None = None
    fnz: int | None = None
    f_stats: list = field(default_factory=list)
    n_interventions: int = 0


def oos_mse(fit, gt, x_samples):
    """Mean squared gap between the true interventional mean and the fit."""
    truth = true_effect(gt, x_samples)
    pred = predict_effect(fit, x_samples)
    return float(np.mean((np.asarray(truth) - np.asarray(pred)) ** 2))


def _check_pair(beta_hat, beta_true):
    a = np.asarray(beta_hat, dtype=float)
    b = np.asarray(beta_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def beta_mse(beta_hat_log, beta_true_log):
    """``mean((beta_hat - beta)**2)`` over the p log-contrast coefficients.

    >>> beta_mse([1, -1, 0], [0, 0, 0])
    0.6666666666666666
    """
    a, b = _check_pair(beta_hat_log, beta_true_log)
    for name, v in (("estimate", a), ("truth", b)):
        if abs(v.sum()) > 1e-6 * max(1.0, np.abs(v).sum()):
            raise ValueError(f"{name} does not sum to zero")
    return float(np.mean((a - b) ** 2))


def support_errors(beta_hat_log, beta_true_log, zero_tol=ZERO_TOL):
    """False zeros and false non-zeros of an estimated coefficient vector.

    Returns
    -------
    fz : int
        True non-zeros estimated as zero (``|beta_hat| <= zero_tol``).
    fnz : int
        True zeros estimated as non-zero.
    """
    a, b = _check_pair(beta_hat_log, beta_true_log)
    est_zero = np.abs(a) <= zero_tol
    true_zero = b == 0
    return int(np.sum(~true_zero & est_zero)), int(np.sum(true_zero & ~est_zero))


def evaluate(fit, gt, x_samples):
    """All metrics of one fit; coefficient metrics only for linear fits of linear truths."""
    rep = MetricsReport(oos_mse(fit, gt, x_samples), f_stats=list(fit.diagnostics.get("f_stats", [])),
                        n_interventions=len(x_samples))
    if fit.beta_log is not None and gt.linear:
        rep.beta_mse = beta_mse(fit.beta_log, gt.beta_log)
        rep.fz, rep.fnz = support_errors(fit.beta_log, gt.beta_log)
    return rep


# --------------------------------------------------------------------------
# benchmark


def mean_se(values):
    """Mean and standard error ``std(ddof=1) / sqrt(k)`` of the finite entries."""
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if len(v) == 0:
        return float("nan"), float("nan")
    if len(v) == 1:
        return float(v[0]), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))


@dataclass
class BenchmarkResult:
    """Per-seed ``records`` and the per-(scenario, method) ``summary`` rows."""

    records: list
    summary: list

    def to_csv(self):
        cols = ["scenario", "method", "n_ok", "n_failed", "n_nonconverged", "oos_mse", "oos_mse_se",
                "beta_mse", "beta_mse_se", "fz", "fnz"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.summary:
            w.writerow({k: _fmt_csv(row.get(k)) for k in cols})
        return buf.getvalue()

    def to_text(self):
        lines = [f"{'scenario':<14} {'method':<10} {'OOS MSE':>22} {'beta-MSE':>20} {'FZ':>6} {'FNZ':>6}  runs"]
        for r in self.summary:
            oos = _fmt_pm(r["oos_mse"], r["oos_mse_se"])
            bm = _fmt_pm(r["beta_mse"], r["beta_mse_se"]) if r["beta_mse"] is not None else "---"
            fz = "---" if r["fz"] is None else f"{r['fz']:.2f}"
            fnz = "---" if r["fnz"] is None else f"{r['fnz']:.2f}"
            runs = f"{r['n_ok']} ok"
            if r["n_failed"]:
                runs += f", {r['n_failed']} failed"
            if r["n_nonconverged"]:
                runs += f", {r['n_nonconverged']} not converged"
            lines.append(f"{r['scenario']:<14} {r['method']:<10} {oos:>22} {bm:>20} {fz:>6} {fnz:>6}  {runs}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def cell(self, scenario, method):
        for r in self.summary:
            if r["scenario"] == scenario and r["method"] == method:
                return r
        raise KeyError((scenario, method))


def _fmt_csv(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _fmt_pm(m, se):
    if m is None or not np.isfinite(m):
        return "failed"
    if abs(m) >= 1e4:
        return f">{10 ** int(np.floor(np.log10(abs(m)))):.0e}"
    return f"{m:.3g} ± {se:.2g}" if np.isfinite(se) else f"{m:.3g}"


def _run_seed(spec_dict, seed, methods, m, method_kwargs):
    spec = SimulationSpec.from_dict(spec_dict).with_(seed=seed)
    ds, gt = generate(spec)
    xs = interventional_sample(spec, m)
    out = []
    for name in methods:
        rec = {"scenario": spec.name or spec.setting, "method": name, "seed": seed}
        try:
            fit = fit_method(name, ds, seed=seed, **method_kwargs.get(name, {}))
            rep = evaluate(fit, gt, xs)
            rec.update(asdict(rep))
            rec["status"] = "ok" if fit.converged else "nonconverged"
            if not np.isfinite(rep.oos_mse):
                rec["status"] = "failed"
                rec["error"] = "non-finite predictions"
        except Exception as err:  # a failing fit is a result, not a crash
            log.warning("%s seed %d %s failed: %s", rec["scenario"], seed, name, err)
            rec.update({"status": "failed", "error": f"{type(err).__name__}: {err}", "oos_mse": None,
                        "beta_mse": None, "fz": None, "fnz": None})
        out.append(_clean(rec))
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def benchmark(specs, methods, n_seeds, *, seed0=0, m=250, jobs=1, method_kwargs=None):
    """Run every method on every scenario for seeds ``seed0 .. seed0 + n_seeds - 1``.

    Failed fits become records with ``status="failed"`` and are excluded
    from the metric means; fits flagged as not converged are kept in the
    means and counted separately.

    Parameters
    ----------
    specs : list of SimulationSpec
    methods : list of str
        Keys of :data:`compiv.pipelines.METHODS`.
    n_seeds : int
        At least 2 (a standard error needs two runs).
    jobs : int
        Worker processes; results do not depend on it.
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be at least 2 to report standard errors")
    method_kwargs = method_kwargs or {}
    tasks = [(s.to_dict(), seed0 + k, list(methods), m, method_kwargs) for s in specs for k in range(n_seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            chunks = list(ex.map(_run_seed, *zip(*tasks)))
    else:
        chunks = [_run_seed(*t) for t in tasks]
    records = [r for c in chunks for r in c]
    summary = []
    for s in specs:
        scen = s.name or s.setting
        for name in methods:
            rows = [r for r in records if r["scenario"] == scen and r["method"] == name]
            ok = [r for r in rows if r["status"] != "failed"]
            row = {"scenario": scen, "method": name, "n_ok": len(ok),
                   "n_failed": len(rows) - len(ok),
                   "n_nonconverged": sum(r["status"] == "nonconverged" for r in rows)}
            row["oos_mse"], row["oos_mse_se"] = mean_se([r["oos_mse"] for r in ok])
            if any(r.get("beta_mse") is not None for r in ok):
                row["beta_mse"], row["beta_mse_se"] = mean_se([r["beta_mse"] for r in ok])
                row["fz"] = float(np.mean([r["fz"] for r in ok if r["fz"] is not None]))
                row["fnz"] = float(np.mean([r["fnz"] for r in ok if r["fnz"] is not None]))
            else:
                row.update({"beta_mse": None, "beta_mse_se": None, "fz": None, "fnz": None})
            summary.append(_clean(row))
    return BenchmarkResult(records, summary)
