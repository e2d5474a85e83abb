"""Two-stage causal-effect estimators for compositional treatments.

Every estimator takes an :class:`~compiv.datagen.IVDataset` and returns a
:class:`CausalFit`; :func:`predict_effect` evaluates the fitted effect
function at new compositions. Method tags:

========== ==============================================================
2SLS       two-stage least squares on raw proportions (last part dropped)
2SLS_ILR   two-stage least squares on ilr coordinates
KIV_ILR    kernel IV on ilr coordinates
ILR+LC     OLS on ilr, then sparse log-contrast regression on fitted X
ALR+LC     the same with alr coordinates in the first stage
DIR+LC     Dirichlet regression first stage, sparse log-contrast second
OnlyLC     sparse log-contrast regression of y on X, no instruments
========== ==============================================================
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .datagen import IVDataset
from .first_stage import (
    COND_LIMIT,
    DirichletConvergenceError,
    KernelFit,
    RankDeficientError,
    first_stage_f_stats,
    fit_dirichlet_glm,
    fit_kiv,
    fit_ols,
)
from .lasso import SQUARED, LossSpec, stability_select
from .logratio import alr, alr_inv, beta_ilr_to_log, beta_log_to_ilr, ilr, ilr_inv
from .simplex import diversity

__all__ = [
    "UnderIdentifiedError",
    "CausalFit",
    "two_stage_least_squares",
    "fit_2sls",
    "fit_ilr_lc",
    "fit_alr_lc",
    "fit_dir_lc",
    "fit_kiv_ilr",
    "fit_only_lc",
    "fit_diversity_iv",
    "predict_effect",
    "binarize",
    "METHODS",
    "fit_method",
    "fit_to_dict",
    "fit_from_dict",
    "with_counts",
]

log = logging.getLogger(__name__)


class UnderIdentifiedError(ValueError):
    """Fewer instruments than treatment coordinates."""


@dataclass
class CausalFit:
    """A fitted causal-effect function.

    Linear fits carry ``beta_log`` (sum-zero, length p) and ``intercept``.
    ``raw_coef`` holds the naive 2SLS coefficients on the first p-1
    proportions; ``kernel`` the second-stage KIV predictor; ``scalar`` the
    diversity measure for scalar-treatment fits.
    """

    method: str
    p: int
    q: int
    n: int
    intercept: float = 0.0
    beta_log: np.ndarray | None = None
    raw_coef: np.ndarray | None = None
    kernel: KernelFit | None = None
    scalar: str | None = None
    slope: float | None = None
    loss: str = "squared"
    diagnostics: dict = field(default_factory=dict)

    @property
    def beta_ilr(self):
        return None if self.beta_log is None else beta_log_to_ilr(self.beta_log)

    @property
    def converged(self):
        return bool(self.diagnostics.get("converged", True))

    @property
    def is_linear(self):
        return self.beta_log is not None


# --------------------------------------------------------------------------
# 2SLS


def two_stage_least_squares(Z, T, y):
    """``(T' P_Z T)^-1 T' P_Z y`` with an intercept column in both Z and T.

    Returns
    -------
    intercept : float
    coef : ndarray of shape (d,)

    Raises
    ------
    UnderIdentifiedError
        If ``q < d``.
    RankDeficientError
        If ``T' P_Z T`` has condition number above 1e10.
    """
    Z = np.asarray(Z, dtype=float)
    T = np.asarray(T, dtype=float)
    Z = Z[:, None] if Z.ndim == 1 else Z
    T = T[:, None] if T.ndim == 1 else T
    y = np.asarray(y, dtype=float).ravel()
    n, q = Z.shape
    d = T.shape[1]
    if q < d:
        raise UnderIdentifiedError(f"under-identified: {q} instruments for {d} treatment coordinates")
    Zd = np.column_stack([np.ones(n), Z])
    Td = np.column_stack([np.ones(n), T])
    Q, _ = np.linalg.qr(Zd)
    That = Q @ (Q.T @ Td)  # P_Z T
    A = That.T @ Td
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficientError(f"T' P_Z T is singular (condition number {cond:.3g})")
    coef = np.linalg.solve(A, That.T @ y)
    return float(coef[0]), coef[1:]


def _f_stats(Z, T):
    try:
        return [float(f) for f in np.atleast_1d(first_stage_f_stats(Z, T))]
    except (ValueError, np.linalg.LinAlgError):
        return []


def fit_2sls(ds, treatment_coords="ilr"):
    """Linear IV regression of ``y`` on a treatment representation.

    Parameters
    ----------
    treatment_coords : {"ilr", "raw"} or array_like of shape (n,) or (n, d)
        ``"raw"`` uses the proportions with the last part dropped (the full
        set is collinear with the intercept); an array is used as-is, e.g. a
        scalar diversity index.
    """
    if isinstance(treatment_coords, str):
        if treatment_coords == "ilr":
            T = ilr(ds.X)
        elif treatment_coords == "raw":
            T = ds.X[:, :-1]
        else:
            raise ValueError(f"unknown treatment coordinates {treatment_coords!r}")
        kind = treatment_coords
    else:
        T = np.asarray(treatment_coords, dtype=float)
        if len(T) != ds.n:
            raise ValueError("treatment vector length does not match the dataset")
        kind = "scalar"
    b0, coef = two_stage_least_squares(ds.Z, T, ds.y)
    diag = {"f_stats": _f_stats(ds.Z, T), "converged": True}
    fit = CausalFit("2SLS", ds.p, ds.q, ds.n, intercept=b0, diagnostics=diag)
    if kind == "ilr":
        fit.method = "2SLS_ILR"
        fit.beta_log = beta_ilr_to_log(coef)
    elif kind == "raw":
        fit.raw_coef = coef
    else:
        fit.method = "2SLS_scalar"
        fit.slope = float(coef[0]) if coef.size == 1 else None
        fit.raw_coef = coef
    return fit


# --------------------------------------------------------------------------
# log-contrast pipelines


def _second_stage(method, ds, X_hat, loss, threshold, n_resamples, seed, diag):
    prof, lin = stability_select(np.log(X_hat), ds.y, loss, threshold, n_resamples, seed=seed)
    diag.update({
        "selection_freq": prof.selection_freq.tolist(),
        "selected": prof.selected.tolist(),
        "empty_selection": bool(prof.empty),
        "lambda_path_meta": {"n_lambdas": len(prof.lambdas), "lambda_max": float(prof.lambdas[0]),
                             "lambda_min": float(prof.lambdas[-1]), "threshold": threshold,
                             "n_resamples": n_resamples, "seed": seed},
    })
    diag.setdefault("converged", True)
    diag["converged"] = bool(diag["converged"] and lin.converged)
    return CausalFit(method, ds.p, ds.q, ds.n, intercept=lin.intercept, beta_log=lin.beta_log,
                     loss=loss.kind, diagnostics=diag)


def fit_ilr_lc(ds, *, loss=SQUARED, threshold=0.7, n_resamples=50, seed=0, coords="ilr"):
    """OLS first stage on log-ratio coordinates, sparse log-contrast second stage.

    The first-stage fitted coordinates are mapped back to compositions and
    the second stage regresses ``y`` on their logs with stability selection.
    """
    if coords == "ilr":
        fwd, inv, tag = ilr, ilr_inv, "ILR+LC"
    elif coords == "alr":
        fwd, inv, tag = alr, alr_inv, "ALR+LC"
    else:
        raise ValueError(f"unknown coordinates {coords!r}")
    T = fwd(ds.X)
    stage1 = fit_ols(ds.Z, T)
    X_hat = inv(stage1.predict(ds.Z))
    diag = {"f_stats": _f_stats(ds.Z, ilr(ds.X)), "converged": True}
    return _second_stage(tag, ds, X_hat, _loss(loss), threshold, n_resamples, seed, diag)


def fit_alr_lc(ds, **kw):
    """:func:`fit_ilr_lc` with alr coordinates; OLS fitted values are equivariant, so the fits agree."""
    return fit_ilr_lc(ds, coords="alr", **kw)


def fit_dir_lc(ds, *, loss=SQUARED, threshold=0.7, n_resamples=50, seed=0, lambda_grid=None,
               max_iter=5000):
    """Dirichlet regression first stage, sparse log-contrast second stage.

    If the Dirichlet fit hits its iteration limit, the best iterate is used
    and ``diagnostics["converged"]`` is False.
    """
    kw = {"max_iter": max_iter}
    if lambda_grid is not None:
        kw["lambda_grid"] = lambda_grid
    try:
        glm = fit_dirichlet_glm(ds.Z, ds.X, **kw)
        converged = True
    except DirichletConvergenceError as err:
        log.warning("DIR+LC: %s", err)
        glm = err.best
        converged = False
    X_hat = glm.predict_mean(ds.Z)
    diag = {"f_stats": _f_stats(ds.Z, ilr(ds.X)), "converged": converged,
            "dirichlet": {"lambda": glm.lambda_dirichlet, "bic": glm.bic,
                          "n_iter": glm.diagnostics.get("n_iter"), "converged": converged}}
    if not np.all(np.isfinite(X_hat)) or np.any(X_hat <= 0):
        # predicted means underflowed; clip into the interior so stage 2 can run
        X_hat = np.clip(np.nan_to_num(X_hat, nan=1.0 / ds.p), 1e-300, None)
        X_hat = X_hat / X_hat.sum(axis=1, keepdims=True)
        diag["converged"] = False
        diag["clipped_first_stage"] = True
    return _second_stage("DIR+LC", ds, X_hat, _loss(loss), threshold, n_resamples, seed, diag)


def fit_only_lc(ds, *, loss=SQUARED, threshold=0.7, n_resamples=50, seed=0):
    """Sparse log-contrast regression of ``y`` on ``X``, ignoring the instruments."""
    diag = {"converged": True}
    return _second_stage("OnlyLC", ds, ds.X, _loss(loss), threshold, n_resamples, seed, diag)


def _loss(loss):
    if isinstance(loss, LossSpec):
        return loss
    return LossSpec(loss)


def fit_kiv_ilr(ds, *, seed=0, **kw):
    """Kernel IV with ilr coordinates as the treatment."""
    T = ilr(ds.X)
    kf = fit_kiv(ds.Z, T, ds.y, split_seed=seed, **kw)
    diag = {"f_stats": _f_stats(ds.Z, T), "converged": True,
            "kernel": {"lam": kf.lam, "xi": kf.xi, "sigma_x": kf.sigma_x, "sigma_z": kf.sigma_z}}
    return CausalFit("KIV_ILR", ds.p, ds.q, ds.n, kernel=kf, diagnostics=diag)


# --------------------------------------------------------------------------
# scalar diversity


def _diversity_of(ds, measure):
    if measure == "richness":
        counts = ds.counts
        if counts is None:
            raise ValueError("richness needs raw counts (IVDataset.counts); "
                             "pseudo-counted compositions have no zeros")
        return diversity(np.asarray(counts, dtype=float), "richness").astype(float)
    return diversity(ds.X, measure)


def fit_diversity_iv(ds, measure="shannon", method="2sls", *, seed=0):
    """IV regression of ``y`` on a scalar diversity index of ``X``.

    For ``method="kiv"`` the reported ``slope`` is the least-squares slope of
    the fitted effect function over the observed index values.
    """
    D = _diversity_of(ds, measure)
    if method == "2sls":
        fit = fit_2sls(ds, D)
    elif method == "kiv":
        kf = fit_kiv(ds.Z, D, ds.y, split_seed=seed)
        f = kf.predict(D)
        slope = float(np.polyfit(D, f, 1)[0]) if np.ptp(D) > 0 else 0.0
        fit = CausalFit("KIV_scalar", ds.p, ds.q, ds.n, kernel=kf, slope=slope,
                        diagnostics={"f_stats": _f_stats(ds.Z, D), "converged": True})
    else:
        raise ValueError(f"unknown method {method!r}")
    fit.method = f"{fit.method}:{measure}"
    fit.scalar = measure
    return fit


# --------------------------------------------------------------------------
# prediction


def predict_effect(fit, x_new):
    """Fitted effect ``f(x)`` at new compositions (margins for classifiers)."""
    x = np.asarray(x_new, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if np.any(x <= 0):
        raise ValueError("x_new has zero or negative parts; pseudo-count upstream")
    if fit.scalar is not None:
        D = diversity(x / x.sum(axis=1, keepdims=True), fit.scalar)
        out = fit.kernel.predict(D) if fit.kernel is not None else fit.intercept + fit.slope * D
    elif fit.beta_log is not None:
        out = fit.intercept + np.log(x) @ fit.beta_log
    elif fit.kernel is not None:
        out = fit.kernel.predict(ilr(x))
    elif fit.raw_coef is not None:
        xc = x / x.sum(axis=1, keepdims=True)
        out = fit.intercept + xc[:, :-1] @ fit.raw_coef
    else:
        raise ValueError("fit carries no effect function")
    return float(out[0]) if single else out


def binarize(y):
    """Split at the mean into labels -1 / +1."""
    y = np.asarray(y, dtype=float)
    return np.where(y > y.mean(), 1.0, -1.0)


# --------------------------------------------------------------------------
# registry and serialisation

METHODS = {
    "2SLS": lambda ds, seed=0, **kw: fit_2sls(ds, "raw"),
    "2SLS_ILR": lambda ds, seed=0, **kw: fit_2sls(ds, "ilr"),
    "KIV_ILR": lambda ds, seed=0, **kw: fit_kiv_ilr(ds, seed=seed),
    "ILR+LC": lambda ds, seed=0, **kw: fit_ilr_lc(ds, seed=seed, **kw),
    "ALR+LC": lambda ds, seed=0, **kw: fit_alr_lc(ds, seed=seed, **kw),
    "DIR+LC": lambda ds, seed=0, **kw: fit_dir_lc(ds, seed=seed, **kw),
    "OnlyLC": lambda ds, seed=0, **kw: fit_only_lc(ds, seed=seed, **kw),
}


def fit_method(name, ds, seed=0, **kw):
    try:
        fn = METHODS[name]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}") from None
    return fn(ds, seed=seed, **kw)


def _lst(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def fit_to_dict(fit):
    d = {"method": fit.method, "p": fit.p, "q": fit.q, "n": fit.n, "intercept": fit.intercept,
         "beta_log": _lst(fit.beta_log), "beta_ilr": _lst(fit.beta_ilr), "raw_coef": _lst(fit.raw_coef),
         "scalar": fit.scalar, "slope": fit.slope, "loss": fit.loss, "diagnostics": _jsonable(fit.diagnostics)}
    if fit.kernel is not None:
        k = fit.kernel
        d["kernel"] = {"split_seed": k.split_seed, "bandwidths": [k.sigma_x, k.sigma_z],
                       "ridge_params": [k.lam, k.xi], "dual_weights": k.dual_weights.tolist(),
                       "train_coords": k.X_train.tolist(), "offset": k.offset, "n": k.n, "m": k.m}
    return d


def fit_from_dict(d):
    kernel = None
    if d.get("kernel"):
        k = d["kernel"]
        X_train = np.asarray(k["train_coords"], dtype=float)
        kernel = KernelFit(X_train, np.empty((0, 0)), np.asarray(k["dual_weights"], dtype=float),
                           k["bandwidths"][0], k["bandwidths"][1], k["ridge_params"][0],
                           k["ridge_params"][1], k["n"], k["m"], k["offset"], k["split_seed"])
    arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
    return CausalFit(d["method"], d["p"], d["q"], d["n"], d["intercept"], arr(d.get("beta_log")),
                     arr(d.get("raw_coef")), kernel, d.get("scalar"), d.get("slope"), d.get("loss", "squared"),
                     d.get("diagnostics", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def with_counts(Z, counts, y, pc=0.5):
    """Dataset from raw counts: zeros replaced by a pseudo-count, counts kept for richness."""
    counts = np.asarray(counts, dtype=float)
    X = counts + pc if np.any(counts == 0) else counts
    return IVDataset(Z, X / X.sum(axis=1, keepdims=True), y, {"pseudo_count": pc}, counts)
