"""Shared instances, independent oracles and random-case generators for the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from egmarket.model import UNBOUNDED, make_scenario
from egmarket.scenario_io import bundled_path, load_source
from egmarket.utility import CES, CobbDouglas, Leontief, Linear, Nest, utility_sum


def cd_2x2():
    return make_scenario(
        [("a", 1.0), ("b", 1.0)],
        [("alice", 1.0, CobbDouglas({0: 0.75, 1: 0.25})), ("bob", 1.0, CobbDouglas({0: 0.25, 1: 0.75}))],
    )


def linear_2x2():
    return make_scenario(
        [("a", 1.0), ("b", 1.0)],
        [("alice", 1.0, Linear({0: 2.0, 1: 1.0})), ("bob", 1.0, Linear({0: 1.0, 1: 2.0}))],
    )


def leontief_1r():
    return make_scenario([("cpu", 10.0)], [("small", 2.0, Leontief({0: 1.0})), ("large", 3.0, Leontief({0: 1.0}))])


def energy_1a():
    return make_scenario([("compute", UNBOUNDED)], [("solo", 1.0, Linear({0: 1.0}))], [({0: 2.0}, 4.0)])


def table1(**params):
    src = load_source(bundled_path("table1.scenario"))
    for k, v in params.items():
        src = src.with_value(f"params.{k}", v)
    return src.scenario()


def table1_source():
    return load_source(bundled_path("table1.scenario"))


# independent oracles


def bisect(f, lo, hi, tol=1e-14, iters=200):
    """Root of a monotone scalar function on [lo, hi] by bisection."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def single_good_energy_price(budget, beta, limit, capacity=math.inf):
    """Clearing price of one good with demand B/p under x^beta <= limit and x <= capacity.

    Supply is the largest x allowed by both rows; the price solves B/p = supply.
    """
    supply = min(capacity, limit ** (1.0 / beta))
    return bisect(lambda p: budget / p - supply, 1e-9, 1e9)


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.array(cols).T


def grid_demand(u, prices, budget, step):
    """Best bundle on the budget line by exhaustive search (2 goods)."""
    best, arg = -math.inf, None
    for x0 in np.arange(0.0, budget / prices[0] + step / 2, step):
        x1 = (budget - prices[0] * x0) / prices[1]
        if x1 < 0:
            continue
        v = u.value(np.array([x0, x1]))
        if v > best:
            best, arg = v, np.array([x0, x1])
    return arg, best


def grid_cd_equilibrium(step=0.005):
    """Cobb-Douglas 2x2 equilibrium by grid search over alice's allocation.

    Bob takes the remainder; the Nash welfare is maximised on the grid.
    """
    s = cd_2x2()
    best, arg = -math.inf, None
    axis = np.arange(step, 1.0, step)
    for a, b in itertools.product(axis, axis):
        xa, xb = np.array([a, b]), np.array([1 - a, 1 - b])
        v = math.log(s.agents[0].utility.value(xa)) + math.log(s.agents[1].utility.value(xb))
        if v > best:
            best, arg = v, np.array([xa, xb])
    return arg, best


# random cases for the property suites

RHOS = (1.0, 0.5, -1.0, -3.0)


def random_leaf(rng: np.random.Generator, K: int, resources=None):
    kind = rng.integers(4)
    res = resources if resources is not None else rng.choice(K, size=rng.integers(1, K + 1), replace=False)
    w = {int(k): float(rng.uniform(0.2, 3.0)) for k in res}
    if kind == 0:
        return Linear(w)
    if kind == 1:
        return Leontief(w)
    if kind == 2:
        tot = sum(w.values())
        return CobbDouglas({k: v / tot for k, v in w.items()})
    return CES(w, float(rng.choice([0.5, -1.0, -2.0])))


def random_tree(rng: np.random.Generator, K: int = 4, depth: int = 2):
    if depth == 0 or rng.random() < 0.35:
        return random_leaf(rng, K)
    n = int(rng.integers(2, 4))
    kids = tuple((float(rng.uniform(0.3, 2.0)), random_tree(rng, K, depth - 1)) for _ in range(n))
    return Nest(float(rng.choice(RHOS)), kids)


def random_smooth_tree(rng: np.random.Generator, K: int = 4, depth: int = 2):
    """Trees without Leontief leaves (differentiable at interior points)."""
    while True:
        u = random_tree(rng, K, depth)
        if not u.leontief_leaves():
            return u


def random_separable_tree(rng: np.random.Generator, K: int = 5):
    perm = list(rng.permutation(K))
    parts = []
    while perm:
        take = int(rng.integers(1, min(3, len(perm)) + 1))
        parts.append(random_leaf(rng, K, perm[:take]))
        perm = perm[take:]
    if len(parts) == 1:
        return parts[0]
    return Nest(float(rng.choice(RHOS)), tuple((float(rng.uniform(0.3, 2.0)), p) for p in parts))


def random_market(rng: np.random.Generator, N=None, K=None, energy=None):
    """A small valid scenario with Leontief-sum, CD, linear or CES agents."""
    N = N or int(rng.integers(1, 4))
    K = K or int(rng.integers(1, 4))
    res = [(f"r{k}", float(rng.uniform(1, 10))) for k in range(K)]
    agents = []
    for n in range(N):
        u = random_leaf(rng, K)
        if rng.random() < 0.3 and K > 1:
            u = utility_sum(random_leaf(rng, K), random_leaf(rng, K))
        agents.append((f"a{n}", float(rng.uniform(0.2, 3.0)), u))
    en = []
    if energy if energy is not None else rng.random() < 0.5:
        k = int(rng.integers(K))
        en.append(({k: float(rng.uniform(1, 2.5))}, float(rng.uniform(1, 20))))
    return make_scenario(res, agents, en)
