"""Simplex arithmetic for compositional vectors.

Compositions are plain numpy arrays whose last axis holds the parts. Every
function accepts a single composition of shape ``(p,)`` or a batch of shape
``(n, p)`` and returns an array of matching leading shape.

The operations here make the open simplex a real vector space: perturbation
plays the role of addition, powering the role of scalar multiplication and the
uniform composition is the zero element.
"""

import warnings

import numpy as np

__all__ = [
    "SUM_TOL",
    "ClosureWarning",
    "closure",
    "as_composition",
    "uniform",
    "perturb",
    "perturb_inv",
    "power",
    "aitchison_inner",
    "aitchison_norm",
    "pseudo_count",
    "diversity",
]

#: Tolerance on ``sum(x) == 1`` for something to count as already closed.
SUM_TOL = 1e-9


class ClosureWarning(UserWarning):
    """Input was presented as a composition but did not sum to one."""


def _as_float_array(v):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        raise ValueError("expected a vector of parts, got a scalar")
    if arr.shape[-1] < 2:
        raise ValueError(f"a composition needs at least 2 parts, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("composition contains non-finite values")
    return arr


def _require_positive(x, what="composition"):
    if np.any(x <= 0):
        raise ValueError(f"{what} must be strictly positive; pseudo-count zeros first")


def closure(v):
    """Scale non-negative vectors so that their parts sum to one.

    Parameters
    ----------
    v : array_like of shape (..., p)
        Non-negative parts, ``p >= 2``.

    Returns
    -------
    ndarray of shape (..., p)

    Raises
    ------
    ValueError
        On negative entries or an all-zero row.

    Examples
    --------
    >>> closure([2, 3, 5])
    array([0.2, 0.3, 0.5])
    """
    v = _as_float_array(v)
    if np.any(v < 0):
        raise ValueError("closure is undefined for negative entries")
    total = v.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise ValueError("cannot close an all-zero vector")
    out = v / total
    # Rows closed to within rounding are returned untouched so that closure is
    # exactly idempotent.
    closed = np.abs(total - 1.0) <= 8 * np.finfo(float).eps
    return np.where(closed, v, out)


def as_composition(x, *, positive=False):
    """Validate ``x`` as a composition, re-closing rows that drifted.

    Rows that do not sum to one within :data:`SUM_TOL` (typically after a CSV
    round trip) are re-closed and a :class:`ClosureWarning` is emitted.
    """
    x = _as_float_array(x)
    if np.any(x < 0):
        raise ValueError("composition has negative parts")
    if positive:
        _require_positive(x)
    if np.any(np.abs(x.sum(axis=-1) - 1.0) > SUM_TOL):
        warnings.warn("composition re-closed: parts did not sum to 1", ClosureWarning, stacklevel=2)
        x = closure(x)
    return x


def uniform(p):
    """The neutral element of the simplex with ``p`` parts."""
    if p < 2:
        raise ValueError("p must be at least 2")
    return np.full(p, 1.0 / p)


def perturb(x, w):
    """Simplex addition: component-wise product followed by closure."""
    x = _as_float_array(x)
    w = _as_float_array(w)
    if x.shape[-1] != w.shape[-1]:
        raise ValueError(f"length mismatch: {x.shape[-1]} vs {w.shape[-1]} parts")
    _require_positive(x)
    _require_positive(w)
    return closure(x * w)


def perturb_inv(x, w):
    """Simplex subtraction ``x - w``."""
    return perturb(x, power(-1.0, w))


def power(a, x):
    """Simplex scalar multiplication: raise every part to ``a`` then close.

    Zero parts are allowed only for ``a > 0``.
    """
    x = _as_float_array(x)
    if np.any(x < 0):
        raise ValueError("power is undefined for negative parts")
    if a <= 0 and np.any(x == 0):
        raise ValueError("zero parts cannot be raised to a non-positive power")
    return closure(x ** float(a))


def aitchison_inner(x, w):
    """Aitchison inner product of two compositions.

    Evaluated from the pairwise log-ratio definition
    ``(1 / 2p) * sum_ij log(x_i/x_j) log(w_i/w_j)``, so it does not depend on
    any coordinate system.
    """
    x = _as_float_array(x)
    w = _as_float_array(w)
    if x.shape[-1] != w.shape[-1]:
        raise ValueError(f"length mismatch: {x.shape[-1]} vs {w.shape[-1]} parts")
    _require_positive(x)
    _require_positive(w)
    p = x.shape[-1]
    lx = np.log(x)
    lw = np.log(w)
    rx = lx[..., :, None] - lx[..., None, :]
    rw = lw[..., :, None] - lw[..., None, :]
    return (rx * rw).sum(axis=(-2, -1)) / (2 * p)


def aitchison_norm(x):
    return np.sqrt(aitchison_inner(x, x))


def pseudo_count(counts, pc=0.5):
    """Add a constant to raw counts and close.

    Only apply this to counts. Adding a constant to an already closed
    composition changes its meaning.
    """
    if not pc > 0:
        raise ValueError(f"pseudo-count must be positive, got {pc}")
    c = _as_float_array(counts)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    if np.any(c.sum(axis=-1) == 0):
        raise ValueError("count vector is all zero")
    return closure(c + pc)


def diversity(x, kind="shannon", *, zero_tol=1e-12):
    """Alpha-diversity of a composition.

    Parameters
    ----------
    x : array_like of shape (..., p)
        Closed composition(s). Zero parts are allowed.
    kind : {"richness", "shannon", "simpson"}
        ``richness`` counts parts above ``zero_tol``; ``shannon`` is
        ``-sum x log x`` with ``0 log 0 = 0``; ``simpson`` is ``-sum x**2``.
    zero_tol : float
        Threshold used by ``richness``.

    Notes
    -----
    The Simpson index here is the negated sum of squares, not the more common
    Gini-Simpson ``1 - sum x**2``. The two differ by a constant, so regression
    slopes on either are identical and only intercepts move.
    """
    x = _as_float_array(x)
    if np.any(x < 0):
        raise ValueError("composition has negative parts")
    if kind == "richness":
        return np.count_nonzero(x > zero_tol, axis=-1)
    if kind == "shannon":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        return -terms.sum(axis=-1)
    if kind == "simpson":
        return -(x**2).sum(axis=-1)
    raise ValueError(f"unknown diversity kind {kind!r}")
