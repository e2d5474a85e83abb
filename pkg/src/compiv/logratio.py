"""Log-ratio coordinates for compositions (alr, clr, ilr) and their inverses.

The ilr transform needs an orthonormal basis of the sum-zero subspace. The
default is the Helmert matrix without its first row, transposed to a
``p x (p-1)`` matrix ``V`` so that ``ilr(x) = clr(x) @ V``. Any other basis
with orthonormal, sum-zero columns can be passed in its place.

All transforms reject zero parts; replace zeros upstream, e.g. with
:func:`compiv.simplex.pseudo_count`.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import helmert

from .simplex import closure

__all__ = [
    "LogRatioBasis",
    "helmert_basis",
    "alr",
    "alr_inv",
    "clr",
    "clr_inv",
    "ilr",
    "ilr_inv",
    "beta_log_to_ilr",
    "beta_ilr_to_log",
]


@dataclass(frozen=True, eq=False)
class LogRatioBasis:
    """Orthonormal basis of the clr subspace, stored column-wise as ``V``."""

    V: np.ndarray

    def __post_init__(self):
        V = np.array(self.V, dtype=float)
        if V.ndim != 2 or V.shape[1] != V.shape[0] - 1:
            raise ValueError(f"basis must be p x (p-1), got {V.shape}")
        if not np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10):
            raise ValueError("basis columns are not orthonormal")
        if not np.allclose(V.sum(axis=0), 0.0, atol=1e-10):
            raise ValueError("basis columns must sum to zero")
        V.setflags(write=False)
        object.__setattr__(self, "V", V)

    @property
    def p(self):
        return self.V.shape[0]


@lru_cache(maxsize=64)
def helmert_basis(p):
    """Helmert contrasts without the constant row, as a ``p x (p-1)`` basis.

    Column ``k`` contrasts the first ``k+1`` parts against part ``k+2``.

    >>> helmert_basis(2).V.ravel()
    array([ 0.70710678, -0.70710678])
    """
    if p < 2:
        raise ValueError(f"need p >= 2 parts, got {p}")
    return LogRatioBasis(helmert(p).T)


def _log_parts(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise ValueError("expected compositions with at least 2 parts")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise ValueError("log-ratio transforms need strictly positive, finite parts")
    return np.log(x)


def _resolve(basis, p):
    if basis is None:
        return helmert_basis(p)
    if not isinstance(basis, LogRatioBasis):
        basis = LogRatioBasis(basis)
    if basis.p != p:
        raise ValueError(f"basis is for {basis.p} parts, data has {p}")
    return basis


def alr(x):
    """Additive log-ratios against the last part: ``log(x_j / x_p)``, j < p."""
    lx = _log_parts(x)
    return lx[..., :-1] - lx[..., -1:]


def alr_inv(t):
    t = np.asarray(t, dtype=float)
    z = np.concatenate([t, np.zeros(t.shape[:-1] + (1,))], axis=-1)
    # shift by the row max before exponentiating; closure removes it again
    z = z - z.max(axis=-1, keepdims=True)
    return closure(np.exp(z))


def clr(x):
    """Centered log-ratios ``log(x_j / g(x))`` with ``g`` the geometric mean."""
    lx = _log_parts(x)
    return lx - lx.mean(axis=-1, keepdims=True)


def clr_inv(t):
    t = np.asarray(t, dtype=float)
    return closure(np.exp(t - t.max(axis=-1, keepdims=True)))


def ilr(x, basis=None):
    """Isometric log-ratio coordinates ``clr(x) @ V``.

    Parameters
    ----------
    x : array_like of shape (..., p)
        Strictly positive compositions.
    basis : LogRatioBasis or array, optional
        Defaults to :func:`helmert_basis` for ``p`` parts.
    """
    c = clr(x)
    return c @ _resolve(basis, c.shape[-1]).V


def ilr_inv(t, basis=None):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        raise ValueError("expected a coordinate vector")
    V = _resolve(basis, t.shape[-1] + 1).V
    return clr_inv(t @ V.T)


def beta_log_to_ilr(beta_log, basis=None, *, atol=1e-8):
    """Map log-contrast coefficients to ilr coefficients, ``V.T @ beta_log``.

    For sum-zero ``beta_log`` the two parameterisations give the same linear
    predictor: ``beta_log @ log(x) == beta_ilr @ ilr(x)``.
    """
    b = np.asarray(beta_log, dtype=float)
    if abs(b.sum()) > atol * max(1.0, np.abs(b).sum()):
        raise ValueError(f"log-contrast coefficients must sum to zero (sum={b.sum():.3g})")
    return _resolve(basis, b.shape[-1]).V.T @ b


def beta_ilr_to_log(beta_ilr, basis=None):
    """Inverse of :func:`beta_log_to_ilr`; the result sums to zero."""
    b = np.asarray(beta_ilr, dtype=float)
    return _resolve(basis, b.shape[-1] + 1).V @ b
