"""Variable exponent Lebesgue sequence spaces.

Modular functions, the Luxemburg norm, norm-based duality maps and the
componentwise modular derivatives used by the solvers.  Signals and dual
elements are plain 1-D float arrays; exponent sequences are wrapped in
:class:`ExponentMap` so their bounds are validated once.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, ExponentOutOfRange, MapOverflow

#: smallest admissible exponent; keeps 1/(p - 1) bounded in the inverse map
EXPONENT_GUARD = 1.01
#: magnitudes below this are flushed to zero before taking logarithms
TINY = 1e-300
_LOG_MAX = np.log(np.finfo(float).max)


@dataclass(frozen=True, eq=False)
class ExponentMap:
    """Per-coordinate exponents with their infimum and supremum."""

    values: np.ndarray
    p_minus: float
    p_plus: float

    def __len__(self):
        return self.values.size

    @property
    def is_constant(self) -> bool:
        return self.p_minus == self.p_plus

    @classmethod
    def constant(cls, p: float, n: int) -> "ExponentMap":
        return validate_exponent_map(np.full(int(n), float(p)))

    def subset(self, indices) -> "ExponentMap":
        return validate_exponent_map(self.values[np.asarray(indices)])

    def conjugate(self) -> np.ndarray:
        """Pointwise conjugate exponents p / (p - 1)."""
        return self.values / (self.values - 1.0)

    @cached_property
    def _minus_one(self) -> np.ndarray:
        return _frozen(self.values - 1.0)

    @cached_property
    def _inverse(self) -> np.ndarray:
        return _frozen(1.0 / (self.values - 1.0))


def _frozen(a):
    a.setflags(write=False)
    return a


def validate_exponent_map(raw) -> ExponentMap:
    """Check ``raw`` against the admissible family and freeze it.

    Raises
    ------
    ExponentOutOfRange
        If ``raw`` is empty, contains non-finite entries or entries below
        :data:`EXPONENT_GUARD`.
    """
    values = np.array(raw, dtype=float).ravel()
    if values.size == 0:
        raise ExponentOutOfRange("exponent map is empty")
    if not np.all(np.isfinite(values)):
        raise ExponentOutOfRange("exponent map has non-finite entries")
    lo, hi = float(values.min()), float(values.max())
    if lo < EXPONENT_GUARD:
        raise ExponentOutOfRange(
            f"exponents must be >= {EXPONENT_GUARD}, got minimum {lo}")
    values.setflags(write=False)
    return ExponentMap(values, lo, hi)


def as_signal(x, name="signal") -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def _check_len(p: ExponentMap, x: np.ndarray):
    if len(p) != x.size:
        raise DimensionMismatch(
            f"exponent map has {len(p)} entries, signal has {x.size}")


def signed_power(x, e, check_overflow=False) -> np.ndarray:
    """Return ``sign(x) * |x|**e`` elementwise via exp(e * log|x|).

    Entries with ``|x| < TINY`` map to 0 and entries with ``e == 1`` are
    passed through unchanged, so Hilbert-space exponents are exact.
    """
    x = np.asarray(x, dtype=float)
    e = np.asarray(e, dtype=float)
    if e.ndim == 0 and e == 1.0:
        return x.copy()
    out = np.abs(x)
    small = out < TINY
    np.log(out, out=out, where=~small)
    out *= e
    if check_overflow and np.any(out > _LOG_MAX):
        raise MapOverflow("signed power exceeds the floating-point range")
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out[small] = 0.0
    np.copysign(out, x, out=out)
    if e.ndim:
        unit = e == 1.0
        if unit.any():
            out[unit] = x[unit]
    return out


def _abs_power(ax, e):
    small = ax < TINY
    out = np.exp(e * np.log(np.where(small, 1.0, ax)))
    out[small] = 0.0
    return out


def modular_rho(p: ExponentMap, x) -> float:
    """Sum of ``|x_n| ** p_n``."""
    x = as_signal(x)
    _check_len(p, x)
    return float(np.sum(_abs_power(np.abs(x), p.values)))


def modular_rho_bar(p: ExponentMap, x) -> float:
    """Sum of ``|x_n| ** p_n / p_n``."""
    x = as_signal(x)
    _check_len(p, x)
    return float(np.sum(_abs_power(np.abs(x), p.values) / p.values))


def luxemburg_norm(p: ExponentMap, x, tol=1e-12, max_iter=200) -> float:
    """Luxemburg norm ``inf{lam > 0 : rho(x / lam) <= 1}``.

    ``lam -> rho(x / lam)`` is strictly decreasing for nonzero ``x``, so the
    level set is found by bracketing followed by bisection.  ``tol`` is
    relative to the bracket's upper end.
    """
    x = as_signal(x)
    _check_len(p, x)
    ax = np.abs(x)
    keep = ax >= TINY
    if not keep.any():
        return 0.0
    ax, e = ax[keep], p.values[keep]
    log_ax = np.log(ax)

    def excess(lam):
        return np.sum(np.exp(e * (log_ax - np.log(lam)))) - 1.0

    top = float(ax.max())
    spread = x.size ** (1.0 / p.p_minus)
    lo, hi = top / spread, top * spread
    while excess(lo) < 0.0:
        lo /= 2.0
    while excess(hi) > 0.0:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)


def lp_norm(p: float, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(_abs_power(np.abs(x), p)) ** (1.0 / p))


def duality_map_const(p: float, r: float, x) -> np.ndarray:
    """Duality map of l^p with gauge ``t -> t**(r-1)``.

    ``||x||_p**(r-p) * sign(x) * |x|**(p-1)``; the zero vector maps to zero.
    """
    x = as_signal(x)
    if p <= 1 or r <= 1:
        raise ExponentOutOfRange("p and r must exceed 1")
    if r == p:
        return signed_power(x, p - 1.0)
    norm = lp_norm(p, x)
    if norm == 0.0:
        return np.zeros_like(x)
    return norm ** (r - p) * signed_power(x, p - 1.0)


def duality_map_varexp(p: ExponentMap, r: float, x) -> np.ndarray:
    """Norm-based duality map of the variable exponent space.

    Coefficients are ``p_n sign(x_n) |x_n|**(p_n-1) / lam**(p_n-r)`` scaled by
    ``1 / sum_n p_n |x_n|**p_n / lam**p_n`` where ``lam`` is the Luxemburg
    norm.  Both sums are evaluated on ``|x_n| / lam`` to stay in range.
    """
    x = as_signal(x)
    _check_len(p, x)
    lam = luxemburg_norm(p, x)
    if lam == 0.0:
        return np.zeros_like(x)
    e = p.values
    scaled = x / lam
    denom = np.sum(e * _abs_power(np.abs(scaled), e))
    return e * signed_power(scaled, e - 1.0) * lam ** (r - 1.0) / denom


def j_rho(p: ExponentMap, x) -> np.ndarray:
    """Gradient of :func:`modular_rho`: ``p_n sign(x_n) |x_n|**(p_n-1)``."""
    x = as_signal(x)
    _check_len(p, x)
    return p.values * signed_power(x, p.values - 1.0)


def j_rho_bar(p: ExponentMap, x) -> np.ndarray:
    """Gradient of :func:`modular_rho_bar`: ``sign(x_n) |x_n|**(p_n-1)``."""
    x = np.asarray(x, dtype=float)
    _check_len(p, x)
    return signed_power(x, p._minus_one)


def j_rho_bar_inverse(p: ExponentMap, v) -> np.ndarray:
    """Inverse of :func:`j_rho_bar`: ``sign(v_n) |v_n|**(1/(p_n-1))``.

    Raises
    ------
    MapOverflow
        If an entry leaves the floating-point range.
    """
    v = np.asarray(v, dtype=float)
    _check_len(p, v)
    return signed_power(v, p._inverse, check_overflow=True)
