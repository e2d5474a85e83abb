"""First-stage models: instruments -> treatment.

* :func:`fit_ols` / :func:`first_stage_f_stats` -- multivariate least squares
  with intercept, solved by QR.
* :func:`fit_dirichlet_glm` -- Dirichlet regression with log-linear
  concentrations ``alpha_j(z) = exp(omega0_j + z @ omega[:, j])`` and an l1
  penalty on ``omega``, tuned over a penalty grid by BIC.
* :func:`fit_kiv` -- kernel instrumental variable regression, both stages as
  kernel ridge regressions with Gaussian kernels, second stage in closed form.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist
from scipy.special import digamma, gammaln

__all__ = [
    "RankDeficientError",
    "DirichletConvergenceError",
    "OlsFit",
    "fit_ols",
    "first_stage_f_stats",
    "DirichletGLM",
    "dirichlet_loglik",
    "fit_dirichlet_mle",
    "fit_dirichlet_glm",
    "KernelFit",
    "gaussian_kernel",
    "median_bandwidth",
    "fit_kiv",
]

log = logging.getLogger(__name__)

COND_LIMIT = 1e10


class RankDeficientError(ValueError):
    """The design matrix is (numerically) rank deficient."""


class DirichletConvergenceError(RuntimeError):
    """Dirichlet regression hit its iteration limit.

    ``best`` holds the best parameters seen, ``diagnostics`` a dict with the
    iteration count, last relative change and objective.
    """

    def __init__(self, message, best, diagnostics):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics


def _as_2d(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _design(Z):
    Z = _as_2d(Z, "Z")
    D = np.column_stack([np.ones(len(Z)), Z])
    s = np.linalg.svd(D, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > COND_LIMIT:
        _, _, vt = np.linalg.svd(D)
        null = vt[-1]
        names = ["intercept"] + [f"z_{j + 1}" for j in range(Z.shape[1])]
        bad = [names[j] for j in np.flatnonzero(np.abs(null) > 1e-3 * np.abs(null).max())]
        raise RankDeficientError(f"instrument design is rank deficient; collinear columns: {', '.join(bad)}")
    return D


# --------------------------------------------------------------------------
# OLS


@dataclass
class OlsFit:
    """Least-squares fit ``T ~ intercept + Z @ coef``."""

    coef: np.ndarray  # (q, d)
    intercept: np.ndarray  # (d,)

    def predict(self, Z):
        return self.intercept + _as_2d(Z, "Z") @ self.coef


def fit_ols(Z, T):
    """Regress every column of ``T`` on ``Z`` with an intercept.

    Parameters
    ----------
    Z : array_like of shape (n, q)
    T : array_like of shape (n, d) or (n,)

    Raises
    ------
    RankDeficientError
        If ``[1, Z]`` has condition number above 1e10.
    """
    D = _design(Z)
    T = _as_2d(T, "T")
    n, k = D.shape
    if len(T) != n:
        raise ValueError(f"Z has {n} rows but T has {len(T)}")
    if n <= k:
        raise ValueError(f"need more than {k} samples for {k - 1} instruments plus intercept")
    Q, R = np.linalg.qr(D)
    B = linalg.solve_triangular(R, Q.T @ T)
    return OlsFit(coef=B[1:], intercept=B[0])


def first_stage_f_stats(Z, T):
    """F statistic per treatment column against the intercept-only model.

    ``F = ((RSS0 - RSS1) / q) / (RSS1 / (n - q - 1))``.
    """
    Z = _as_2d(Z, "Z")
    T = _as_2d(T, "T")
    n, q = Z.shape
    fit = fit_ols(Z, T)
    rss1 = ((T - fit.predict(Z)) ** 2).sum(axis=0)
    rss0 = ((T - T.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return ((rss0 - rss1) / q) / (rss1 / (n - q - 1))


# --------------------------------------------------------------------------
# Dirichlet regression


@dataclass
class DirichletGLM:
    omega0: np.ndarray  # (p,)
    omega: np.ndarray  # (q, p)
    lambda_dirichlet: float = 0.0
    loglik: float = float("nan")
    bic: float = float("nan")
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def concentrations(self, Z):
        eta = self.omega0 + _as_2d(Z, "Z") @ self.omega
        return np.exp(np.clip(eta, -700, 700))

    def predict_mean(self, Z):
        # softmax of the linear predictor, shifted for stability
        eta = self.omega0 + _as_2d(Z, "Z") @ self.omega
        eta = eta - eta.max(axis=1, keepdims=True)
        a = np.exp(eta)
        return a / a.sum(axis=1, keepdims=True)


def dirichlet_loglik(alpha, X):
    """Per-sample Dirichlet log-density; ``alpha`` and ``X`` of shape (n, p)."""
    logx = np.log(X)
    return gammaln(alpha.sum(axis=1)) + ((alpha - 1.0) * logx - gammaln(alpha)).sum(axis=1)


def _moment_start(X):
    """Moment-matching concentrations for a plain Dirichlet."""
    m = X.mean(axis=0)
    v = X.var(axis=0)
    j = int(np.argmax(v))
    s = m[j] * (1 - m[j]) / v[j] - 1.0 if v[j] > 0 else 1.0
    return m * max(s, 1e-2)


def fit_dirichlet_mle(X):
    """Maximum-likelihood concentrations of a plain Dirichlet, started from moments."""
    X = np.asarray(X, dtype=float)
    logx_bar = np.log(X).mean(axis=0)

    def nll(la):
        a = np.exp(la)
        return -(gammaln(a.sum()) - gammaln(a).sum() + ((a - 1) * logx_bar).sum())

    def grad(la):
        a = np.exp(la)
        return -a * (digamma(a.sum()) - digamma(a) + logx_bar)

    res = minimize(nll, np.log(_moment_start(X)), jac=grad, method="L-BFGS-B")
    return np.exp(res.x)


def _dirichlet_objective(w0, W, Z, logX, lam):
    eta = w0 + Z @ W
    if np.any(eta > 700):
        return np.inf
    a = np.exp(eta)
    ll = gammaln(a.sum(axis=1)) + ((a - 1.0) * logX - gammaln(a)).sum(axis=1)
    return -ll.mean() + lam * np.abs(W).sum()


def _dirichlet_grad(w0, W, Z, logX):
    a = np.exp(w0 + Z @ W)
    G = a * (digamma(a.sum(axis=1))[:, None] + logX - digamma(a))
    n = len(Z)
    return -G.mean(axis=0), -(Z.T @ G) / n


def _fit_dirichlet_fixed(Z, X, lam, w0, W, *, max_iter, tol):
    logX = np.log(X)
    obj = _dirichlet_objective(w0, W, Z, logX, lam)
    if not np.isfinite(obj):
        raise ValueError("Dirichlet start point has a non-finite objective")
    step = 1.0
    rel = np.inf
    for it in range(1, max_iter + 1):
        g0, gW = _dirichlet_grad(w0, W, Z, logX)
        smooth = obj - lam * np.abs(W).sum()
        while True:
            n0 = w0 - step * g0
            V = W - step * gW
            nW = np.sign(V) * np.maximum(np.abs(V) - step * lam, 0.0)
            d0, dW = n0 - w0, nW - W
            new_obj = _dirichlet_objective(n0, nW, Z, logX, lam)
            if np.isfinite(new_obj):
                new_smooth = new_obj - lam * np.abs(nW).sum()
                bound = smooth + g0 @ d0 + (gW * dW).sum() + ((d0 @ d0) + (dW * dW).sum()) / (2 * step)
                if new_smooth <= bound and new_obj <= obj:
                    break
            step *= 0.5
            if step < 1e-20:
                return w0, W, obj, it, True, 0.0
        rel = (obj - new_obj) / max(abs(obj), 1e-12)
        w0, W, obj = n0, nW, new_obj
        step *= 2.0
        if rel < tol:
            return w0, W, obj, it, True, rel
    return w0, W, obj, max_iter, False, rel


def fit_dirichlet_glm(Z, X, lambda_grid=(0.1, 1.0, 2.0, 5.0, 10.0), *, max_iter=5000, tol=1e-9,
                      init_radius=0.2):
    """Penalised Dirichlet regression, penalty picked by BIC.

    For each penalty the objective ``-sum loglik + lam * sum|omega|`` is
    minimised by proximal gradient descent with backtracking (internally on
    the per-sample scale, with the penalty divided by ``n``). The fit with
    the smallest ``BIC = k log(n) - 2 loglik`` wins, where ``k`` counts the
    intercepts plus the non-zero slopes and ``loglik`` is summed over samples.

    The start point is a plain Dirichlet fit on the rows with every
    ``|z| < init_radius``; with fewer than ``p + 1`` such rows, moment
    matching on all rows is used instead.

    Raises
    ------
    DirichletConvergenceError
        If the selected fit did not converge within ``max_iter`` iterations.
    """
    Z = _as_2d(Z, "Z")
    X = _as_2d(X, "X")
    if np.any(X <= 0):
        raise ValueError("Dirichlet regression needs strictly positive compositions")
    n, p = X.shape
    q = Z.shape[1]
    near = np.all(np.abs(Z) < init_radius, axis=1)
    if near.sum() >= p + 1:
        a0 = fit_dirichlet_mle(X[near])
        init = "mle-near-zero"
    else:
        a0 = _moment_start(X)
        init = "moments-all"
    fits = []
    w0, W = np.log(a0), np.zeros((q, p))
    for lam in sorted(lambda_grid):
        # penalty on the summed log-likelihood == mean objective with lam / n
        w0, W, obj, n_iter, conv, rel = _fit_dirichlet_fixed(Z, X, lam / n, w0, W, max_iter=max_iter, tol=tol)
        ll = float(dirichlet_loglik(np.exp(w0 + Z @ W), X).sum())
        k = p + int(np.count_nonzero(W))
        bic = k * np.log(n) - 2.0 * ll
        diag = {"n_iter": n_iter, "rel_change": rel, "objective": obj, "init": init}
        fits.append(DirichletGLM(w0.copy(), W.copy(), lam, ll, bic, conv, diag))
        log.debug("dirichlet lam=%g bic=%.4g iters=%d converged=%s", lam, bic, n_iter, conv)
    best = min(fits, key=lambda f: f.bic)
    best.diagnostics["bic_by_lambda"] = {f.lambda_dirichlet: f.bic for f in fits}
    if not best.converged:
        raise DirichletConvergenceError(
            f"Dirichlet regression did not converge in {max_iter} iterations (lam={best.lambda_dirichlet})",
            best, best.diagnostics)
    return best


# --------------------------------------------------------------------------
# kernel IV


def gaussian_kernel(A, B, sigma):
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma**2))


def median_bandwidth(A, max_points=1000, seed=0):
    """Median pairwise distance (on at most ``max_points`` rows)."""
    A = np.asarray(A, dtype=float)
    if len(A) > max_points:
        A = A[np.random.default_rng(seed).choice(len(A), max_points, replace=False)]
    d = pdist(A)
    d = d[d > 0]
    return float(np.median(d)) if len(d) else 1.0


@dataclass
class KernelFit:
    """Second-stage KIV predictor ``f(x) = offset + alpha @ k(X_train, x)``."""

    X_train: np.ndarray
    Z_train: np.ndarray
    dual_weights: np.ndarray
    sigma_x: float
    sigma_z: float
    lam: float
    xi: float
    n: int
    m: int
    offset: float
    split_seed: int = 0
    diagnostics: dict = field(default_factory=dict)

    def predict(self, T):
        T = _as_2d(T, "T")
        return self.offset + gaussian_kernel(T, self.X_train, self.sigma_x) @ self.dual_weights


def _jitter(K):
    return K + 1e-10 * np.trace(K) / len(K) * np.eye(len(K))


def fit_kiv(Z, T, y, *, lam=None, xi=None, grid=np.geomspace(1e-6, 1.0, 10), split_seed=0,
            split=0.5, max_stage_size=1500):
    """Kernel instrumental variable regression of ``y`` on treatment ``T``.

    The sample is split at random (``split_seed``) into a stage-1 part of
    size ``n`` used for the conditional mean embedding of ``T`` given ``Z``,
    and a stage-2 part of size ``m`` carrying the outcomes. With ``K`` Gaussian
    Gram matrices::

        W     = K_XX (K_ZZ + n lam I)^-1 K_ZZ~
        alpha = (W W' + m xi K_XX)^-1 W y~
        f(x)  = alpha' K_Xx

    Outcomes are centred on the stage-2 mean, which is added back as
    ``offset``. Unset ``lam`` / ``xi`` are tuned on ``grid``: ``lam`` by the
    stage-1 out-of-sample embedding error on the stage-2 part, ``xi`` by the
    outcome prediction error on the stage-1 part. Each part is capped at
    ``max_stage_size`` rows.
    """
    Z = _as_2d(Z, "Z")
    T = _as_2d(T, "T")
    y = np.asarray(y, dtype=float).ravel()
    N = len(y)
    if not (len(Z) == len(T) == N):
        raise ValueError("Z, T and y must have the same number of rows")
    if N < 4:
        raise ValueError("KIV needs at least 4 samples")
    perm = np.random.default_rng(split_seed).permutation(N)
    n_split = int(round(split * N))
    i1 = perm[:n_split][:max_stage_size]
    i2 = perm[n_split:][:max_stage_size]
    X1, Z1, y1 = T[i1], Z[i1], y[i1]
    X2, Z2, y2 = T[i2], Z[i2], y[i2]
    n, m = len(i1), len(i2)
    sx = median_bandwidth(X1, seed=split_seed)
    sz = median_bandwidth(Z1, seed=split_seed)
    K_xx = gaussian_kernel(X1, X1, sx)
    K_zz = gaussian_kernel(Z1, Z1, sz)
    K_zz2 = gaussian_kernel(Z1, Z2, sz)
    K_xx2 = gaussian_kernel(X1, X2, sx)
    evals, U = np.linalg.eigh(K_zz)
    evals = np.clip(evals, 0.0, None)
    UtKz2 = U.T @ K_zz2
    UtKz1 = U.T @ K_zz

    def gamma(l, rhs):
        return U @ (rhs / (evals + n * l)[:, None])

    errs1 = {}
    if lam is None:
        K_x_x2 = K_xx2
        for l in grid:
            G = gamma(l, UtKz2)
            err = (m - 2.0 * np.sum(K_x_x2 * G) + np.sum(G * (K_xx @ G))) / m
            errs1[float(l)] = float(err)
        lam = min(errs1, key=errs1.get)
    W = K_xx @ gamma(lam, UtKz2)
    offset = float(y2.mean())
    y2c = y2 - offset
    y1c = y1 - offset
    WWt = W @ W.T
    Wy = W @ y2c
    K1 = K_xx @ gamma(lam, UtKz1)  # embedding of stage-1 instruments, (n, n)
    K_reg = _jitter(K_xx)

    def solve_alpha(x):
        A = WWt + m * x * K_reg
        # tiny xi leaves A near singular; the ridge term still yields a usable solution
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            return linalg.solve(A, Wy, assume_a="sym")

    errs2 = {}
    if xi is None:
        for x in grid:
            a = solve_alpha(x)
            errs2[float(x)] = float(np.mean((y1c - a @ K1) ** 2))
        xi = min(errs2, key=errs2.get)
    alpha = solve_alpha(xi)
    if not np.all(np.isfinite(alpha)):
        raise np.linalg.LinAlgError("KIV dual weights are not finite")
    diag = {"stage1_errors": errs1, "stage2_errors": errs2}
    return KernelFit(X1.copy(), Z1.copy(), alpha, sx, sz, float(lam), float(xi), n, m, offset,
                     split_seed, diag)
