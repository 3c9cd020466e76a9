"""CES-family utility trees.

A utility is a tree whose leaves are Linear, Leontief, Cobb-Douglas or CES
functions over a subset of the resources, and whose inner nodes combine child
utilities with a weighted CES aggregator. Every tree is continuous, concave and
homogeneous of degree one on the non-negative orthant.

Leaves and nodes work on a full length-K quantity vector; resources a leaf does
not reference are ignored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class UnavailableGradient(ValueError):
    """Raised when a supergradient is requested on the boundary of a smooth leaf."""


def _freeze(weights: Mapping[int, float] | Sequence[tuple[int, float]]) -> tuple[tuple[int, float], ...]:
    items = weights.items() if isinstance(weights, Mapping) else weights
    return tuple(sorted((int(k), float(v)) for k, v in items))


def _check_point(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("invalid point")
    if np.any(x < 0):
        raise ValueError("invalid point: negative quantities")
    return x


class UtilitySpec:
    """Base class for utility tree elements."""

    def value(self, x) -> float:
        raise NotImplementedError

    def supergradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def resources(self) -> frozenset[int]:
        raise NotImplementedError

    def leaves(self) -> Iterator["Leaf"]:
        raise NotImplementedError

    def leontief_leaves(self) -> list["Leontief"]:
        return [lf for lf in self.leaves() if isinstance(lf, Leontief)]

    def __call__(self, x) -> float:
        return self.value(x)

    def lifted(self, x, t) -> tuple[float, np.ndarray, np.ndarray]:
        """Value, gradient and Hessian with Leontief leaves replaced by ``t``.

        ``t`` holds one value per Leontief leaf in depth-first order (the order
        of :meth:`leontief_leaves`). The returned derivatives are taken with
        respect to the stacked vector ``(x, t)``; the function is smooth there
        as long as the smooth leaves see strictly positive arguments.
        """
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        n_leaves = len(self.leontief_leaves())
        if t.size != n_leaves:
            raise ValueError("t has %d entries, tree has %d Leontief leaves" % (t.size, n_leaves))
        counter = [0]
        val, g, h = self._lifted(x, t, counter)
        if counter[0] != t.size:
            raise ValueError("t has %d entries, tree has %d Leontief leaves" % (t.size, counter[0]))
        return val, g, h

    def _lifted(self, x, t, counter) -> tuple[float, np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(frozen=True)
class Leaf(UtilitySpec):
    weights: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", _freeze(self.weights))

    @property
    def index(self) -> np.ndarray:
        return np.array([k for k, _ in self.weights], dtype=int)

    @property
    def coef(self) -> np.ndarray:
        return np.array([v for _, v in self.weights], dtype=float)

    def resources(self) -> frozenset[int]:
        return frozenset(k for k, _ in self.weights)

    def leaves(self) -> Iterator["Leaf"]:
        yield self

    def _embed(self, xs_grad, xs_hess, n):
        """Scatter leaf-local derivatives into the stacked (x, t) space."""
        g = np.zeros(n)
        h = np.zeros((n, n))
        idx = self.index
        g[idx] = xs_grad
        h[np.ix_(idx, idx)] = xs_hess
        return g, h


@dataclass(frozen=True)
class Linear(Leaf):
    """sum_k v_k x_k"""

    def value(self, x) -> float:
        x = _check_point(x)
        return float(self.coef @ x[self.index])

    def supergradient(self, x) -> np.ndarray:
        x = _check_point(x)
        g = np.zeros(x.size)
        g[self.index] = self.coef
        return g

    def _lifted(self, x, t, counter):
        n = x.size + t.size
        m = len(self.weights)
        g, h = self._embed(self.coef, np.zeros((m, m)), n)
        return float(self.coef @ x[self.index]), g, h


@dataclass(frozen=True)
class Leontief(Leaf):
    """min_k x_k / d_k, where the weights are the per-unit demands d_k."""

    def value(self, x) -> float:
        x = _check_point(x)
        return float(np.min(x[self.index] / self.coef))

    def binding(self, x, rtol: float = 0.0) -> np.ndarray:
        """Resource indices whose ratio x_k/d_k attains the minimum."""
        x = np.asarray(x, dtype=float)
        ratios = x[self.index] / self.coef
        m = ratios.min()
        return self.index[ratios <= m + rtol * max(abs(m), 1.0)]

    def supergradient(self, x) -> np.ndarray:
        # ties go to the lowest-index binding resource
        x = _check_point(x)
        ratios = x[self.index] / self.coef
        j = int(np.argmin(ratios))
        g = np.zeros(x.size)
        g[self.index[j]] = 1.0 / self.coef[j]
        return g

    def _lifted(self, x, t, counter):
        n = x.size + t.size
        j = x.size + counter[0]
        counter[0] += 1
        g = np.zeros(n)
        g[j] = 1.0
        return float(t[j - x.size]), g, np.zeros((n, n))


@dataclass(frozen=True)
class CobbDouglas(Leaf):
    """prod_k x_k^a_k with exponents normalised to sum to one."""

    def __post_init__(self):
        super().__post_init__()
        total = sum(v for _, v in self.weights)
        if total > 0 and abs(total - 1.0) > 1e-12:
            logger.warning("Cobb-Douglas exponents sum to %g; normalising to 1", total)
            object.__setattr__(self, "weights", tuple((k, v / total) for k, v in self.weights))

    def value(self, x) -> float:
        x = _check_point(x)
        xs = x[self.index]
        if np.any(xs <= 0):
            return 0.0
        return float(np.exp(self.coef @ np.log(xs)))

    def supergradient(self, x) -> np.ndarray:
        x = _check_point(x)
        xs = x[self.index]
        if np.any(xs <= 0):
            raise UnavailableGradient("Cobb-Douglas gradient undefined on the boundary")
        u = self.value(x)
        g = np.zeros(x.size)
        g[self.index] = self.coef * u / xs
        return g

    def _lifted(self, x, t, counter):
        n = x.size + t.size
        a = self.coef
        xs = x[self.index]
        u = float(np.exp(a @ np.log(xs)))
        gs = a * u / xs
        hs = np.outer(gs, gs) / u - np.diag(a * u / xs**2)
        g, h = self._embed(gs, hs, n)
        return u, g, h


@dataclass(frozen=True)
class CES(Leaf):
    """(sum_k v_k x_k^rho)^(1/rho) for rho in (-inf, 0) U (0, 1]."""

    rho: float = 0.5

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "rho", float(self.rho))

    def value(self, x) -> float:
        x = _check_point(x)
        xs = x[self.index]
        r = self.rho
        if r < 0 and np.any(xs <= 0):
            return 0.0
        s = float(self.coef @ xs**r)
        return s ** (1.0 / r) if s > 0 else 0.0

    def supergradient(self, x) -> np.ndarray:
        x = _check_point(x)
        xs = x[self.index]
        r = self.rho
        g = np.zeros(x.size)
        if r == 1.0:
            g[self.index] = self.coef
            return g
        if np.any(xs <= 0):
            raise UnavailableGradient("CES gradient undefined on the boundary")
        u = self.value(x)
        g[self.index] = u ** (1 - r) * self.coef * xs ** (r - 1)
        return g

    def _lifted(self, x, t, counter):
        n = x.size + t.size
        r = self.rho
        v = self.coef
        xs = x[self.index]
        if r == 1.0:
            g, h = self._embed(v, np.zeros((v.size, v.size)), n)
            return float(v @ xs), g, h
        u = float(v @ xs**r) ** (1.0 / r)
        gs = u ** (1 - r) * v * xs ** (r - 1)
        hs = (1 - r) / u * np.outer(gs, gs) + np.diag(u ** (1 - r) * v * (r - 1) * xs ** (r - 2))
        g, h = self._embed(gs, hs, n)
        return u, g, h


@dataclass(frozen=True)
class Nest(UtilitySpec):
    """Weighted CES aggregate of child utilities; ``rho == 1`` is a weighted sum."""

    rho: float
    children: tuple[tuple[float, UtilitySpec], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "children", tuple((float(w), c) for w, c in self.children))

    def resources(self) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        for _, c in self.children:
            out |= c.resources()
        return out

    def leaves(self) -> Iterator[Leaf]:
        for _, c in self.children:
            yield from c.leaves()

    @property
    def child_weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.children])

    def _combine(self, u: np.ndarray) -> float:
        w = self.child_weights
        r = self.rho
        if r == 1.0:
            return float(w @ u)
        if r < 0 and np.any(u <= 0):
            return 0.0
        s = float(w @ u**r)
        return s ** (1.0 / r) if s > 0 else 0.0

    def _outer_partials(self, u: np.ndarray, val: float) -> tuple[np.ndarray, np.ndarray]:
        """First and second derivatives of the aggregator w.r.t. child values."""
        w = self.child_weights
        r = self.rho
        if r == 1.0:
            return w, np.zeros((w.size, w.size))
        a = val ** (1 - r) * w * u ** (r - 1)
        m = (1 - r) / val * np.outer(a, a) + np.diag(val ** (1 - r) * w * (r - 1) * u ** (r - 2))
        return a, m

    def value(self, x) -> float:
        x = _check_point(x)
        return self._combine(np.array([c.value(x) for _, c in self.children]))

    def supergradient(self, x) -> np.ndarray:
        x = _check_point(x)
        u = np.array([c.value(x) for _, c in self.children])
        if self.rho != 1.0 and np.any(u <= 0):
            raise UnavailableGradient("CES node gradient undefined at a zero child")
        a, _ = self._outer_partials(u, self._combine(u))
        g = np.zeros(x.size)
        for ai, (_, c) in zip(a, self.children):
            g += ai * c.supergradient(x)
        return g

    def _lifted(self, x, t, counter):
        n = x.size + t.size
        vals, grads, hess = [], [], []
        for _, c in self.children:
            v, g, h = c._lifted(x, t, counter)
            vals.append(v)
            grads.append(g)
            hess.append(h)
        u = np.array(vals)
        val = self._combine(u)
        a, m = self._outer_partials(u, val)
        J = np.array(grads)
        g = a @ J
        h = np.einsum("c,cij->ij", a, np.array(hess)) + J.T @ m @ J
        return val, g, h


def is_separable(u: UtilitySpec) -> bool:
    """True when no resource is referenced by more than one leaf."""
    seen: set[int] = set()
    for lf in u.leaves():
        r = lf.resources()
        if seen & r:
            return False
        seen |= r
    return True


def utility_sum(*parts: UtilitySpec) -> Nest:
    """Plain sum of utilities (a unit-weight rho=1 node)."""
    return Nest(1.0, tuple((1.0, p) for p in parts))


def eval_utility(u: UtilitySpec, x) -> float:
    return u.value(x)


def utility_supergradient(u: UtilitySpec, x) -> np.ndarray:
    return u.supergradient(x)


def validate_utility(u: UtilitySpec, n_resources: int, path: str = "utility") -> list[str]:
    """Structural checks on a utility tree; returns human-readable violations."""
    problems: list[str] = []
    if isinstance(u, Nest):
        if not u.children:
            problems.append(f"{path}: node has no children")
        if not _valid_rho(u.rho):
            problems.append(f"{path}: rho must lie in (-inf, 0) U (0, 1], got {u.rho}")
        for i, (w, c) in enumerate(u.children):
            if not (w > 0 and math.isfinite(w)):
                problems.append(f"{path}.children[{i}]: weight must be > 0, got {w}")
            problems.extend(validate_utility(c, n_resources, f"{path}.children[{i}]"))
        return problems
    if not isinstance(u, Leaf):
        return [f"{path}: not a utility element"]
    if not u.weights:
        problems.append(f"{path}: leaf references no resource")
    for k, v in u.weights:
        if not 0 <= k < n_resources:
            problems.append(f"{path}: unknown resource {k}")
        if not (v > 0 and math.isfinite(v)):
            problems.append(f"{path}: weight for resource {k} must be > 0, got {v}")
    if isinstance(u, CES) and not _valid_rho(u.rho):
        problems.append(f"{path}: rho must lie in (-inf, 0) U (0, 1], got {u.rho}")
    return problems


def _valid_rho(r: float) -> bool:
    return math.isfinite(r) and r != 0.0 and r <= 1.0
