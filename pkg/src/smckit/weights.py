"""Weight-vector utilities and the p-effective-sample-size family."""

from __future__ import annotations

import enum
import math

import numpy as np

from .errors import DegenerateWeightsError, InvalidOrderError


class EssOrder(enum.Enum):
    """Distinguished order values. Only ``INF`` exists; finite orders are floats."""

    INF = "inf"

    def __repr__(self):
        return "INF"

    def __str__(self):
        return "inf"


INF = EssOrder.INF


def as_order(p):
    """Coerce user input (float, ``"inf"``, ``math.inf`` or ``INF``) to an order."""
    if p is INF:
        return INF
    if isinstance(p, str):
        if p.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        p = float(p)
    p = float(p)
    if math.isinf(p) and p > 0:
        return INF
    if not p >= 1:
        raise InvalidOrderError(f"invalid order: p={p} (need p >= 1)")
    return p


def _checked(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise DegenerateWeightsError("degenerate weights: need a nonempty 1-d vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DegenerateWeightsError("degenerate weights: negative or non-finite entries")
    if not np.any(w > 0):
        raise DegenerateWeightsError("degenerate weights: all entries zero")
    return w


def normalize(w) -> np.ndarray:
    """Return a new probability vector proportional to ``w``."""
    w = _checked(w)
    return w / w.sum()


def entropic_ess(w) -> float:
    """exp of the entropy of the normalised weights (0 log 0 = 0)."""
    q = normalize(w)
    pos = q[q > 0]
    h = -math.fsum(pos * np.log(pos))
    return _clip(math.exp(h), q.size)


def p_ess(w, p=INF) -> float:
    """p-ESS ``(|w|_1/|w|_p)^(p/(p-1))``; entropic at p=1 and ``|w|_1/|w|_inf`` at INF."""
    order = as_order(p)
    q = normalize(w)
    n = q.size
    if order is INF:
        return _clip(1.0 / q.max(), n)
    if order == 1.0:
        return entropic_ess(q)
    pos = q[q > 0]
    # log sum q^p = log1p(sum q (q^(p-1) - 1)), stable as p -> 1
    s = math.fsum(pos * np.expm1((order - 1.0) * np.log(pos)))
    log_ess = -math.log1p(s) / (order - 1.0)
    return _clip(math.exp(log_ess), n)


def _clip(value: float, n: int) -> float:
    # 1 <= ESS <= N holds exactly; remove last-bit rounding excursions
    return min(max(value, 1.0), float(n))


def conjugate(p) -> float:
    """Conjugate exponent p* = p/(p-1); infinite at p=1 and 1 at INF."""
    p = as_order(p)
    if p is INF:
        return 1.0
    if p == 1.0:
        return math.inf
    return p / (p - 1.0)


def ess_property_violations(w, rel_tol: float = 1e-12, limit_tol: float = 1e-4) -> list[str]:
    """Check bounds, monotonicity, sandwich and the p -> 1 limit on one vector."""
    n = len(w)
    orders = (1.0, 2.0, INF)
    e = {p: p_ess(w, p) for p in orders}
    out = []
    for p, v in e.items():
        if not 1.0 - rel_tol <= v <= n * (1 + rel_tol):
            out.append(f"bounds: E^{p}={v} outside [1, {n}]")
    for p, q in ((1.0, 2.0), (2.0, INF), (1.0, INF)):
        if e[p] < e[q] * (1 - rel_tol):
            out.append(f"monotonicity: E^{p}={e[p]} < E^{q}={e[q]}")
        ratio = conjugate(q) / conjugate(p)
        lower = n ** (-(1.0 - ratio)) * e[p]
        if e[q] < lower * (1 - rel_tol):
            out.append(f"sandwich: E^{q}={e[q]} < {lower}")
    near = p_ess(w, 1.0 + 1e-6)
    if abs(near - e[1.0]) / e[1.0] > limit_tol:
        out.append(f"limit: E^(1+1e-6)={near} vs entropic {e[1.0]}")
    return out
