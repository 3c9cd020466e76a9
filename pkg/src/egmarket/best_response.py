"""An agent's utility-maximising demand at fixed prices.

Separable trees (no resource shared between leaves) are solved exactly by
recursing on indirect utilities: every degree-one homogeneous leaf turns one
unit of currency into a fixed amount of utility, and a CES node over such
children is again a CES demand problem in "utility prices". Trees that share
resources between leaves fall back to projected supergradient ascent over
the simplex of spending shares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from egmarket.model import Agent
from egmarket.utility import CES, CobbDouglas, Leaf, Leontief, Linear, Nest, UtilitySpec, is_separable

DEMAND_CAP = 1e9


class UnboundedDemand(ValueError):
    pass


class DegeneratePrices(ValueError):
    pass


@dataclass(frozen=True)
class BestResponse:
    demand: np.ndarray
    utility: float
    spending: float
    capped: bool = False
    method: str = "closed-form"


def best_response(a: Agent, prices, tol: float = 1e-9, cap: float = DEMAND_CAP) -> BestResponse:
    p = np.asarray(prices, dtype=float)
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("prices must be finite and non-negative")
    if np.all(p == 0):
        raise DegeneratePrices("degenerate prices: all prices are zero")
    u = a.utility
    if is_separable(u):
        flags = {"capped": False}
        if not math.isfinite(_rate(u, p, flags)):
            raise UnboundedDemand("unbounded: a valued resource has zero price")
        x = np.zeros(p.size)
        _allocate(u, p, a.budget, x, flags, cap)
        method = "closed-form"
    else:
        x = _share_ascent(u, p, a.budget, tol)
        flags = {"capped": False}
        method = "share-ascent"
    return BestResponse(x, u.value(x), float(p @ x), flags["capped"], method)


def indirect_utility(u: UtilitySpec, prices) -> float:
    """Utility obtained per unit of currency at ``prices`` (separable trees only)."""
    return _rate(u, np.asarray(prices, dtype=float), {"capped": False})


def _rate(u: UtilitySpec, p: np.ndarray, flags) -> float:
    if isinstance(u, Nest):
        rates = np.array([_rate(c, p, flags) for _, c in u.children])
        if np.any(np.isinf(rates)):
            return math.inf
        w = u.child_weights
        if u.rho == 1.0:
            return float(np.max(w * rates))
        return _ces_rate(w, rates, u.rho)
    return _leaf_rate(u, p)


def _leaf_rate(lf: Leaf, p: np.ndarray) -> float:
    idx, v = lf.index, lf.coef
    pk = p[idx]
    if isinstance(lf, Linear) or (isinstance(lf, CES) and lf.rho == 1.0):
        if np.any(pk == 0):
            return math.inf
        return float(np.max(v / pk))
    if isinstance(lf, Leontief):
        cost = float(pk @ v)
        return math.inf if cost == 0 else 1.0 / cost
    if isinstance(lf, CobbDouglas):
        if np.any(pk == 0):
            return math.inf
        return float(np.exp(v @ (np.log(v) - np.log(pk))))
    if isinstance(lf, CES):
        r = lf.rho
        if np.any(pk == 0):
            if r > 0:
                return math.inf
            pos = pk > 0
            if not np.any(pos):
                return math.inf
            # zero-price goods are capped by the caller; rate follows the priced part
            return _ces_rate(v[pos], 1.0 / pk[pos], r) if r != 1 else math.inf
        return _ces_rate(v, 1.0 / pk, r)
    raise TypeError(f"unsupported leaf {type(lf).__name__}")


def _ces_rate(w, rates, rho) -> float:
    """Indirect utility of a CES aggregate whose inputs cost 1/rates each."""
    sigma = 1.0 / (1.0 - rho)
    finite = np.isfinite(rates) & (rates > 0)
    pi = 1.0 / rates[finite]
    D = float(np.sum(w[finite] ** sigma * pi ** (1.0 - sigma)))
    if D == 0:
        return 0.0
    return D ** (1.0 / (sigma - 1.0))


def _ces_shares(w, rates, rho) -> np.ndarray:
    sigma = 1.0 / (1.0 - rho)
    out = np.zeros(len(rates))
    finite = np.isfinite(rates) & (rates > 0)
    pi = 1.0 / rates[finite]
    terms = w[finite] ** sigma * pi ** (1.0 - sigma)
    out[finite] = terms / terms.sum()
    return out


def _allocate(u: UtilitySpec, p, spend: float, x: np.ndarray, flags, cap: float) -> None:
    if spend <= 0:
        return
    if isinstance(u, Nest):
        rates = np.array([_rate(c, p, flags) for _, c in u.children])
        w = u.child_weights
        if u.rho == 1.0:
            vals = w * rates
            if np.any(np.isinf(vals)):
                raise UnboundedDemand("unbounded: a valued resource has zero price")
            j = int(np.argmax(vals))  # ties: first child
            shares = np.zeros(len(rates))
            shares[j] = 1.0
        else:
            if u.rho > 0 and np.any(np.isinf(rates)):
                raise UnboundedDemand("unbounded: a valued resource has zero price")
            shares = _ces_shares(w, rates, u.rho)
        for sh, (_, c) in zip(shares, u.children):
            _allocate(c, p, spend * sh, x, flags, cap)
        return
    _allocate_leaf(u, p, spend, x, flags, cap)


def _allocate_leaf(lf: Leaf, p, spend, x, flags, cap) -> None:
    idx, v = lf.index, lf.coef
    pk = p[idx]
    if isinstance(lf, Linear) or (isinstance(lf, CES) and lf.rho == 1.0):
        if np.any(pk == 0):
            raise UnboundedDemand("unbounded: a valued resource has zero price")
        j = int(np.argmax(v / pk))  # ties: lowest resource index
        x[idx[j]] += spend / pk[j]
    elif isinstance(lf, Leontief):
        cost = float(pk @ v)
        if cost == 0:
            raise UnboundedDemand("unbounded: Leontief bundle has zero price")
        x[idx] += v * spend / cost
    elif isinstance(lf, CobbDouglas):
        if np.any(pk == 0):
            raise UnboundedDemand("unbounded: a valued resource has zero price")
        x[idx] += v * spend / pk
    elif isinstance(lf, CES):
        r = lf.rho
        zero = pk == 0
        if np.any(zero):
            if r > 0:
                raise UnboundedDemand("unbounded: a valued resource has zero price")
            x[idx[zero]] += cap
            flags["capped"] = True
            pos = ~zero
            sh = _ces_shares(v[pos], 1.0 / pk[pos], r)
            x[idx[pos]] += sh * spend / pk[pos]
        else:
            sh = _ces_shares(v, 1.0 / pk, r)
            x[idx] += sh * spend / pk
    else:
        raise TypeError(f"unsupported leaf {type(lf).__name__}")


def _project_simplex(y: np.ndarray) -> np.ndarray:
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1.0), 0.0)


def _free_fill(u: UtilitySpec, p: np.ndarray):
    """Zero-priced resources that only pin Leontief bundles alongside priced ones.

    Returns a function completing x on those coordinates (a hair above the
    bundle's need so the binding ratio stays on a priced resource), or raises
    when demand would be unbounded.
    """
    zero = {k for k in u.resources() if p[k] == 0}
    if not zero:
        return lambda x: x
    leaves = list(u.leaves())
    for lf in leaves:
        ks = lf.resources()
        if ks & zero and (not isinstance(lf, Leontief) or ks <= zero):
            raise UnboundedDemand("unbounded: a valued resource has zero price in a non-separable utility")
    pinned = [lf for lf in leaves if isinstance(lf, Leontief) and lf.resources() & zero]

    def fill(x):
        for lf in pinned:
            level = min(x[k] / d for k, d in lf.weights if k not in zero)
            for k, d in lf.weights:
                if k in zero:
                    x[k] = max(x[k], d * level * (1.0 + 1e-9))
        return x

    return fill


def _share_ascent(u: UtilitySpec, p, budget: float, tol: float, max_iter: int = 20000) -> np.ndarray:
    """Maximise log U(B y / p) over spending shares y on the simplex."""
    fill = _free_fill(u, p)
    idx = np.array([k for k in sorted(u.resources()) if p[k] > 0], dtype=int)
    K = p.size

    def to_x(y):
        x = np.zeros(K)
        x[idx] = budget * y / p[idx]
        return fill(x)

    y = np.full(idx.size, 1.0 / idx.size)
    best_y, best_u = y, u.value(to_x(y))
    since_best = 0
    for it in range(max_iter):
        x = to_x(y)
        val = u.value(x)
        try:
            g = u.supergradient(x)[idx] * budget / p[idx] / max(val, 1e-300)
        except ValueError:
            g = 1.0 / np.maximum(y, 1e-12)
        gn = np.linalg.norm(g)
        if gn == 0:
            break
        y = _project_simplex(y + 0.5 / math.sqrt(it + 1.0) * g / gn)
        val = u.value(to_x(y))
        if val > best_u * (1.0 + 0.1 * tol):
            best_y, best_u, since_best = y, val, 0
        else:
            since_best += 1
            if since_best > 2000:
                break
    return to_x(best_y)
