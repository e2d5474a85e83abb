"""Sparse log-contrast regression.

Solves

    min_{b0, beta}  (1/n) sum_i L(y_i, b0 + beta @ log x_i) + lam * ||beta||_1
    subject to      sum(beta) = 0

for squared, Huber, squared-hinge and huberized-hinge losses. The intercept is
never penalised. The sum-zero constraint makes the fitted contrast invariant to
the scale of each composition, so ``beta`` can be read per part.

The solver is monotone FISTA (forward-backward with momentum, keeping the best
iterate). The proximal step of ``lam * ||.||_1`` restricted to the hyperplane
``sum(beta) = 0`` is a soft-threshold of ``v - mu`` where the shift ``mu`` is
the root of a piecewise-linear monotone function, located exactly from its
breakpoints.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .logratio import helmert_basis

__all__ = [
    "LossSpec",
    "SQUARED",
    "LinearFit",
    "RegularizationPath",
    "StabilityProfile",
    "prox_l1_sum_zero",
    "lasso_objective",
    "lambda_max",
    "lambda_grid",
    "fit_constrained_lasso",
    "fit_path",
    "constrained_least_squares",
    "stability_select",
]

_LOSSES = ("squared", "huber", "squared_hinge", "huberized_hinge")


@dataclass(frozen=True)
class LossSpec:
    """Which data-fit term to use.

    ``squared`` is ``r**2``; ``huber`` is ``r**2 / 2`` inside ``|r| < delta``
    and linear outside. The hinge losses act on the margin ``m = y * eta`` with
    labels in {-1, +1}: ``(1 - m)**2`` for ``m <= 1``; the huberized version
    continues linearly below ``m = delta``.
    """

    kind: str = "squared"
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in _LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; choose from {_LOSSES}")
        if self.kind == "huber":
            if self.delta is None or not self.delta > 0:
                raise ValueError("huber loss needs delta > 0")
        elif self.kind == "huberized_hinge":
            if self.delta is None or not 0 < self.delta < 1:
                raise ValueError("huberized hinge loss needs 0 < delta < 1")
        elif self.delta is not None:
            raise ValueError(f"{self.kind} loss takes no delta")

    @property
    def is_classification(self):
        return self.kind in ("squared_hinge", "huberized_hinge")

    def value(self, y, eta):
        """Per-sample loss values."""
        if self.kind == "squared":
            return (y - eta) ** 2
        if self.kind == "huber":
            a = np.abs(y - eta)
            d = self.delta
            return np.where(a < d, 0.5 * a**2, d * (a - 0.5 * d))
        m = y * eta
        if self.kind == "squared_hinge":
            return np.where(m <= 1, (1 - m) ** 2, 0.0)
        d = self.delta
        return np.where(m > 1, 0.0, np.where(m >= d, (1 - m) ** 2, (1 - d) * (1 + d - 2 * m)))

    def deriv(self, y, eta):
        """Derivative of the per-sample loss with respect to ``eta``."""
        if self.kind == "squared":
            return -2.0 * (y - eta)
        if self.kind == "huber":
            return -np.clip(y - eta, -self.delta, self.delta)
        m = y * eta
        if self.kind == "squared_hinge":
            return -2.0 * y * np.maximum(1 - m, 0.0)
        d = self.delta
        return -2.0 * y * np.clip(1 - m, 0.0, 1 - d)

    def curvature(self):
        """Upper bound on the second derivative in ``eta``."""
        return 1.0 if self.kind == "huber" else 2.0

    def rescaled(self, y_scale):
        # Huber with threshold delta on y equals y_scale**2 times Huber with
        # threshold delta / y_scale on y / y_scale.
        if self.kind == "huber":
            return LossSpec("huber", self.delta / y_scale)
        return self


SQUARED = LossSpec()


@dataclass
class LinearFit:
    """Intercept plus sum-zero coefficients on log-abundances."""

    beta_log: np.ndarray
    intercept: float
    lam: float = 0.0
    converged: bool = True
    n_iter: int = 0
    objective: float = float("nan")
    trace: list | None = field(default=None, repr=False)

    def decision_function(self, X_log):
        return self.intercept + np.asarray(X_log) @ self.beta_log

    @property
    def support(self):
        return np.flatnonzero(self.beta_log)


@dataclass
class RegularizationPath:
    lambdas: np.ndarray
    coefs: np.ndarray
    intercepts: np.ndarray
    converged: np.ndarray

    def __len__(self):
        return len(self.lambdas)

    def fit_at(self, k):
        return LinearFit(self.coefs[k].copy(), float(self.intercepts[k]), lam=float(self.lambdas[k]),
                         converged=bool(self.converged[k]))


@dataclass
class StabilityProfile:
    selection_freq: np.ndarray
    threshold: float
    n_resamples: int
    selected: np.ndarray
    lambdas: np.ndarray
    empty: bool = False


# --------------------------------------------------------------------------
# proximal operator


def prox_l1_sum_zero(v, tau):
    """``argmin_b 0.5 * ||b - v||^2 + tau * ||b||_1`` subject to ``sum(b) = 0``.

    The minimiser is ``soft(v - mu, tau)`` for the shift ``mu`` that makes the
    result sum to zero. ``h(mu) = sum(soft(v - mu, tau))`` is continuous,
    non-increasing and linear between the breakpoints ``v_j +- tau``, so the
    root is found by evaluating ``h`` at the sorted breakpoints and
    interpolating on the bracketing segment.
    """
    v = np.asarray(v, dtype=float)
    if tau <= 0:
        return v - v.mean()
    lo = np.sort(v - tau)  # entries with v_j - tau > mu contribute v_j - tau - mu
    hi = np.sort(v + tau)  # entries with v_j + tau < mu contribute v_j + tau - mu
    cs_lo = np.concatenate([[0.0], np.cumsum(lo[::-1])])  # sums of the k largest
    cs_hi = np.concatenate([[0.0], np.cumsum(hi)])  # sums of the k smallest
    bps = np.concatenate([lo, hi])
    bps.sort()
    n_lo = len(lo) - np.searchsorted(lo, bps, side="right")
    n_hi = np.searchsorted(hi, bps, side="left")
    h = (cs_lo[n_lo] - n_lo * bps) + (cs_hi[n_hi] - n_hi * bps)
    # h is non-increasing in mu; h(bps[0]) >= 0 >= h(bps[-1])
    k = np.searchsorted(-h, 0.0, side="left")
    if k == 0:
        mu = bps[0]
    elif k >= len(bps):
        mu = bps[-1]
    else:
        h0, h1 = h[k - 1], h[k]
        mu = bps[k - 1] if h0 == h1 else bps[k - 1] + (bps[k] - bps[k - 1]) * h0 / (h0 - h1)
    u = v - mu
    active = np.abs(u) > tau
    if not active.any():
        return np.zeros_like(v)
    # re-solve mu on the identified active set so the constraint holds to rounding
    s = np.sign(u[active])
    mu = np.mean(v[active] - tau * s)
    out = np.zeros_like(v)
    out[active] = v[active] - mu - tau * s
    # the recomputed shift can only move entries toward zero; drop sign flips
    flipped = np.sign(out) * np.sign(u) < 0
    if flipped.any():
        out[flipped] = 0.0
        a2 = out != 0
        out[a2] -= out.sum() / a2.sum()
    return out


# --------------------------------------------------------------------------
# problem preparation


def _check_inputs(X_log, y, loss):
    X = np.asarray(X_log, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError(f"X_log must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X_log has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if X.shape[1] < 2:
        raise ValueError("a log-contrast needs at least 2 parts")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("inputs contain non-finite values")
    if loss.is_classification and not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("hinge losses need labels in {-1, +1}")
    return X, y


@dataclass
class _Problem:
    """Centred and commonly scaled copy of the data.

    A single scale for all columns keeps both the constraint and the penalty
    weights unchanged, so the scaled problem is equivalent to the original one
    with ``lam_scaled = lam / (x_scale * y_scale)``.
    """

    X: np.ndarray
    y: np.ndarray
    loss: LossSpec
    x_mean: np.ndarray
    x_scale: float
    y_center: float
    y_scale: float
    gram: np.ndarray | None = None
    xty: np.ndarray | None = None
    y2: float = 0.0
    lipschitz: float = 1.0

    @classmethod
    def build(cls, X, y, loss):
        x_mean = X.mean(axis=0)
        Xc = X - x_mean
        x_scale = math.sqrt(np.mean(Xc**2))
        if not x_scale > 0:
            x_scale = 1.0
        Xs = Xc / x_scale
        if loss.is_classification:
            y_center, y_scale = 0.0, 1.0
        else:
            y_center = float(np.mean(y))
            y_scale = float(np.std(y))
            if not y_scale > 0:
                y_scale = 1.0
        ys = (y - y_center) / y_scale
        n = X.shape[0]
        prob = cls(Xs, ys, loss.rescaled(y_scale), x_mean, x_scale, y_center, y_scale)
        if loss.kind == "squared":
            prob.gram = Xs.T @ Xs / n
            prob.xty = Xs.T @ ys / n
            prob.y2 = float(ys @ ys / n)
            top = np.linalg.eigvalsh(prob.gram)[-1]
            prob.lipschitz = 2.0 * max(top, 1e-12)
        else:
            # intercept column plus the scaled design
            top = np.linalg.norm(Xs, 2) ** 2 / n + 1.0
            prob.lipschitz = prob.loss.curvature() * top
        return prob

    @property
    def fast(self):
        return self.gram is not None

    def lam_scaled(self, lam):
        return lam / (self.x_scale * self.y_scale)

    def to_original(self, b0, beta):
        beta_o = beta * self.y_scale / self.x_scale
        b0_o = self.y_center + self.y_scale * b0 - self.x_mean @ beta_o
        return float(b0_o), beta_o

    def to_scaled(self, b0, beta):
        beta_s = np.asarray(beta, dtype=float) * self.x_scale / self.y_scale
        b0_s = (b0 + self.x_mean @ beta - self.y_center) / self.y_scale
        return float(b0_s), beta_s

    # smooth part and gradient, all in scaled units
    def smooth(self, b0, beta):
        if self.fast:
            return float(beta @ self.gram @ beta - 2.0 * self.xty @ beta + self.y2)
        return float(np.mean(self.loss.value(self.y, b0 + self.X @ beta)))

    def grad(self, b0, beta):
        if self.fast:
            return 0.0, 2.0 * (self.gram @ beta - self.xty)
        d = self.loss.deriv(self.y, b0 + self.X @ beta)
        return float(np.mean(d)), self.X.T @ d / len(d)

    def null_intercept(self):
        """Optimal intercept when ``beta = 0``."""
        if self.fast:
            return 0.0
        f = lambda c: float(np.mean(self.loss.value(self.y, np.full_like(self.y, c))))
        res = minimize_scalar(f, bounds=(-10.0, 10.0), method="bounded", options={"xatol": 1e-12})
        return float(res.x)

    def lambda_max_scaled(self):
        b0 = self.null_intercept()
        _, g = self.grad(b0, np.zeros(self.X.shape[1]))
        return 0.5 * float(g.max() - g.min()), b0


def lasso_objective(X_log, y, loss, lam, beta_log, intercept):
    """Penalised objective in original units (the quantity being minimised)."""
    X = np.asarray(X_log, dtype=float)
    y = np.asarray(y, dtype=float)
    eta = intercept + X @ np.asarray(beta_log, dtype=float)
    return float(np.mean(loss.value(y, eta)) + lam * np.abs(beta_log).sum())


# --------------------------------------------------------------------------
# solver


def _solve(prob, lam_s, b0, beta, *, max_iter, rtol, gtol, trace):
    """Monotone FISTA on the scaled problem. Returns (b0, beta, n_iter, converged, obj, trace)."""
    fast = prob.fast

    def total(c, b):
        return prob.smooth(c, b) + lam_s * np.abs(b).sum()

    step = 1.0 / prob.lipschitz
    x_b0, x_beta = b0, beta.copy()
    y_b0, y_beta = b0, beta.copy()
    obj = total(x_b0, x_beta)
    hist = [obj] if trace else None
    t = 1.0
    converged = False
    it = 0
    stalled = 0
    for it in range(1, max_iter + 1):
        g0, g = prob.grad(y_b0, y_beta)
        f_y = prob.smooth(y_b0, y_beta)
        while True:
            z_beta = prox_l1_sum_zero(y_beta - step * g, step * lam_s)
            z_b0 = 0.0 if fast else y_b0 - step * g0
            d_beta = z_beta - y_beta
            d_b0 = z_b0 - y_b0
            sq = float(d_beta @ d_beta + d_b0 * d_b0)
            f_z = prob.smooth(z_b0, z_beta)
            if fast or f_z <= f_y + g0 * d_b0 + float(g @ d_beta) + sq / (2 * step) + 1e-15 * abs(f_y):
                break
            step *= 0.5
        obj_z = f_z + lam_s * np.abs(z_beta).sum()
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if obj_z <= obj:
            prev_b0, prev_beta = x_b0, x_beta
            x_b0, x_beta = z_b0, z_beta
            decrease = obj - obj_z
            obj = obj_z
            y_beta = x_beta + ((t - 1.0) / t_next) * (x_beta - prev_beta)
            y_b0 = x_b0 + ((t - 1.0) / t_next) * (x_b0 - prev_b0)
        else:
            # rejected momentum step: keep the iterate, restart the momentum
            decrease = 0.0
            y_b0, y_beta = x_b0, x_beta.copy()
            t_next = 1.0
        t = t_next
        if trace:
            hist.append(obj)
        # gradient-mapping size at the extrapolated point, in scaled units
        gmap = math.sqrt(sq) / step
        small = gmap <= gtol * (1.0 + math.sqrt(float(x_beta @ x_beta)))
        if small and decrease <= rtol * max(abs(obj), 1e-300):
            converged = True
            break
        # squared loss: once the support has settled, the restricted KKT
        # system gives the exact minimiser; accept it if it is globally optimal
        if fast and it % 5 == 0:
            cand = _polish(prob, lam_s, x_beta)
            if cand is not None and _kkt_ok(prob, lam_s, cand):
                x_beta, obj = cand, total(0.0, cand)
                converged = True
                if trace:
                    hist.append(obj)
                break
        # no progress representable in floating point
        stalled = stalled + 1 if decrease == 0.0 else 0
        if stalled >= 50:
            converged = gmap <= 100 * gtol * (1.0 + math.sqrt(float(x_beta @ x_beta)))
            break
    if fast:
        polished = _polish(prob, lam_s, x_beta)
        if polished is not None:
            obj_p = total(0.0, polished)
            # ties within rounding go to the exact solution
            if obj_p <= obj + 1e-13 * max(1.0, abs(obj)):
                x_beta, obj = polished, obj_p
                if trace:
                    hist.append(obj)
    return x_b0, x_beta, it, converged, obj, hist


def _kkt_ok(prob, lam_s, beta, tol=1e-9):
    """Optimality of a sum-zero lasso candidate via its multiplier ``nu``.

    Active parts need ``g_j + lam * sign(b_j) + nu = 0``, inactive parts
    ``|g_j + nu| <= lam``, with ``g`` the gradient of the smooth part.
    """
    _, g = prob.grad(0.0, beta)
    active = beta != 0
    if active.sum() < 2:
        return False
    r = g[active] + lam_s * np.sign(beta[active])
    nu = -r.mean()
    scale = tol * max(1.0, lam_s, float(np.abs(g).max()))
    if np.abs(r + nu).max() > scale:
        return False
    return bool(np.all(np.abs(g[~active] + nu) <= lam_s + scale))


def _polish(prob, lam_s, beta):
    """Exact squared-loss solution on the support and signs of ``beta``.

    Solves the bordered KKT system of the restricted problem
    ``b' G b - 2 c' b + lam * s' b`` subject to ``sum(b) = 0``. Returns None
    when the support is too small or the signs do not survive.
    """
    active = np.flatnonzero(beta)
    if len(active) < 2:
        return None
    s = np.sign(beta[active])
    k = len(active)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2.0 * prob.gram[np.ix_(active, active)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.concatenate([2.0 * prob.xty[active] - lam_s * s, [0.0]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    b = sol[:k]
    if not np.all(np.isfinite(b)) or np.any(np.sign(b) != s):
        return None
    out = np.zeros_like(beta)
    out[active] = b - b.mean()
    return out


def lambda_max(X_log, y, loss=SQUARED):
    """Smallest penalty at which the constrained fit is identically zero.

    At ``beta = 0`` the KKT conditions ask for a shift ``mu`` with
    ``|g_j + mu| <= lam`` for every gradient entry ``g_j``; the smallest such
    ``lam`` is half the spread of the gradient.
    """
    X, y = _check_inputs(X_log, y, loss)
    prob = _Problem.build(X, y, loss)
    lm, _ = prob.lambda_max_scaled()
    return lm * prob.x_scale * prob.y_scale


def lambda_grid(lam_max, n_lambdas=50, eps=1e-3):
    """Log-spaced descending grid from ``lam_max`` to ``eps * lam_max``."""
    if not lam_max > 0:
        return np.zeros(1)
    return np.geomspace(lam_max, eps * lam_max, n_lambdas)


def _fit_prepared(prob, lam, start=None, *, max_iter=10_000, rtol=1e-9, gtol=1e-8, trace=False):
    p = prob.X.shape[1]
    lam_s = prob.lam_scaled(lam)
    lm, b0_null = prob.lambda_max_scaled()
    # relative slack absorbs the rounding of lambda_max through the unit scaling
    if lam_s >= lm * (1.0 - 1e-12):
        b0, beta = prob.to_original(b0_null, np.zeros(p))
        obj = prob.smooth(b0_null, np.zeros(p)) * prob.y_scale**2
        return LinearFit(beta, b0, lam=lam, converged=True, n_iter=0, objective=obj,
                         trace=[obj] if trace else None)
    if start is None:
        b0_s, beta_s = b0_null, np.zeros(p)
    else:
        b0_s, beta_s = prob.to_scaled(start.intercept, start.beta_log)
        beta_s = beta_s - beta_s.mean()
    b0_s, beta_s, n_iter, conv, obj, hist = _solve(prob, lam_s, b0_s, beta_s, max_iter=max_iter,
                                                   rtol=rtol, gtol=gtol, trace=trace)
    b0, beta = prob.to_original(b0_s, beta_s)
    s2 = prob.y_scale**2
    return LinearFit(beta, b0, lam=lam, converged=conv, n_iter=n_iter, objective=obj * s2,
                     trace=[h * s2 for h in hist] if trace else None)


def fit_constrained_lasso(X_log, y, loss=SQUARED, lam=0.0, *, start=None, max_iter=10_000,
                          rtol=1e-9, gtol=1e-8, trace=False):
    """Fit one sparse log-contrast model.

    Parameters
    ----------
    X_log : array_like of shape (n, p)
        Log-abundances ``log(x_i)``.
    y : array_like of shape (n,)
        Real outcomes, or labels in {-1, +1} for the hinge losses.
    loss : LossSpec
    lam : float
        Penalty weight on ``||beta||_1`` for the objective averaged over
        samples. ``lam >= lambda_max(X_log, y, loss)`` gives ``beta = 0``.
    start : LinearFit, optional
        Warm start.
    trace : bool
        Record the objective after every iteration in ``fit.trace``.

    Returns
    -------
    LinearFit
        ``fit.converged`` is False if ``max_iter`` was reached.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    X, y = _check_inputs(X_log, y, loss)
    prob = _Problem.build(X, y, loss)
    return _fit_prepared(prob, lam, start, max_iter=max_iter, rtol=rtol, gtol=gtol, trace=trace)


def fit_path(X_log, y, loss=SQUARED, lambdas=None, *, n_lambdas=50, eps=1e-3, max_iter=10_000):
    """Fit along a descending grid of penalties with warm starts.

    Without ``lambdas`` the grid runs log-spaced from :func:`lambda_max` down
    to ``eps * lambda_max`` in ``n_lambdas`` points.
    """
    X, y = _check_inputs(X_log, y, loss)
    prob = _Problem.build(X, y, loss)
    if lambdas is None:
        lm, _ = prob.lambda_max_scaled()
        lambdas = lambda_grid(lm * prob.x_scale * prob.y_scale, n_lambdas, eps)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    return _path(prob, lambdas, max_iter=max_iter)


def _path(prob, lambdas, *, max_iter=10_000, stop_above=None):
    """Warm-started path; with ``stop_above`` it ends once the support exceeds that
    size, and the remaining rows repeat the last fit."""
    p = prob.X.shape[1]
    coefs = np.zeros((len(lambdas), p))
    b0s = np.zeros(len(lambdas))
    conv = np.ones(len(lambdas), dtype=bool)
    fit = None
    for k, lam in enumerate(lambdas):
        fit = _fit_prepared(prob, lam, fit, max_iter=max_iter)
        coefs[k] = fit.beta_log
        b0s[k] = fit.intercept
        conv[k] = fit.converged
        if stop_above is not None and np.count_nonzero(fit.beta_log) > stop_above:
            coefs[k + 1:] = fit.beta_log
            b0s[k + 1:] = fit.intercept
            break
    return RegularizationPath(lambdas, coefs, b0s, conv)


def constrained_least_squares(X_log, y, support=None, loss=SQUARED):
    """Unpenalised sum-zero fit restricted to ``support``; zeros elsewhere.

    With fewer than two supported parts the constraint forces every
    coefficient to zero and the fit is intercept-only.
    """
    X, y = _check_inputs(X_log, y, loss)
    n, p = X.shape
    support = np.arange(p) if support is None else np.asarray(support, dtype=int)
    beta = np.zeros(p)
    if len(support) < 2:
        if loss.kind == "squared":
            return LinearFit(beta, float(y.mean()))
        prob = _Problem.build(X, y, loss)
        b0, _ = prob.to_original(prob.null_intercept(), np.zeros(p))
        return LinearFit(beta, b0)
    Xs = X[:, support]
    if loss.kind == "squared":
        # beta_S = N theta with N an orthonormal basis of the sum-zero subspace
        N = helmert_basis(len(support)).V
        A = np.column_stack([np.ones(n), Xs @ N])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        beta[support] = N @ coef[1:]
        return LinearFit(beta, float(coef[0]))
    fit = fit_constrained_lasso(Xs, y, loss, 0.0)
    beta[support] = fit.beta_log
    return LinearFit(beta, fit.intercept, converged=fit.converged, n_iter=fit.n_iter)


def _resample_streams(seed, n_resamples):
    root = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(s)) for s in root.spawn(n_resamples)]


def stability_select(X_log, y, loss=SQUARED, threshold=0.7, n_resamples=50, *, seed=0,
                     n_lambdas=50, eps=1e-2, max_support=10, max_iter=10_000):
    """Stability selection over a shared penalty grid, then an unpenalised refit.

    Each of ``n_resamples`` subsamples of size ``n // 2`` (drawn without
    replacement) is fitted along the same grid of ``n_lambdas`` penalties
    spanning the full-data :func:`lambda_max` down to ``eps`` times it. A part
    counts as selected by a subsample at a grid point if its coefficient is
    non-zero and the subsample's support there holds at most ``max_support``
    parts. The second condition cuts each path off where it stops being
    sparse, and the path is not continued past that point. The selection
    frequency of part ``j`` is the largest fraction of subsamples selecting
    it over the grid points, and parts with frequency at or above
    ``threshold`` are kept. The grid floor ``eps`` is coarser than the
    :func:`fit_path` default because the smallest penalties only add noise
    parts.

    Returns
    -------
    profile : StabilityProfile
    fit : LinearFit
        Sum-zero least-squares refit on the kept parts (loss-specific for
        the non-squared losses). Intercept-only if nothing is kept, in
        which case ``profile.empty`` is set.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if n_resamples < 10:
        raise ValueError("need at least 10 resamples")
    X, y = _check_inputs(X_log, y, loss)
    n, p = X.shape
    full = _Problem.build(X, y, loss)
    lm, _ = full.lambda_max_scaled()
    lambdas = lambda_grid(lm * full.x_scale * full.y_scale, n_lambdas, eps)
    m = n // 2
    hits = np.zeros((len(lambdas), p))
    for rng in _resample_streams(seed, n_resamples):
        idx = rng.choice(n, size=m, replace=False)
        ys = y[idx]
        if loss.is_classification and len(np.unique(ys)) < 2:
            continue
        prob = _Problem.build(X[idx], ys, loss)
        # grid points past a dense support never count, so the path may stop there
        path = _path(prob, lambdas, max_iter=max_iter, stop_above=max_support)
        nz = path.coefs != 0
        ok = nz.sum(axis=1) <= max_support
        hits += nz & ok[:, None]
    freq = (hits / n_resamples).max(axis=0)
    selected = np.flatnonzero(freq >= threshold)
    fit = constrained_least_squares(X, y, selected, loss)
    profile = StabilityProfile(freq, threshold, n_resamples, selected, lambdas,
                               empty=len(selected) == 0)
    return profile, fit
