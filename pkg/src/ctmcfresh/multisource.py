"""Splitting one query budget across several independently monitored chains.

Each source ``i`` gets a single rate ``mu_i`` in ``[rho_l, rho_u]``; the goal
is to maximize ``F = sum_i w_i MBF_i(mu_i)`` subject to
``J = sum_i mu_i <= Omega``.  The Lagrangian ``F - theta J`` separates per
source, and ``J`` at the per-source maximizers is non-increasing in
``theta``, so ``theta`` is found by bisection.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .ctmc import Chain, build_chain, map_structure
from .errors import InfeasibleBounds
from .estimators import PMap, pmap_from_map
from .freshness import mbf

log = logging.getLogger(__name__)

BUDGET_TOL = 1e-6
_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


@dataclass(eq=False)
class Source:
    chain: Chain
    spec: object
    weight: float
    label: str = ""

    def mbf(self, mu: float) -> float:
        return mbf(self.chain, self.spec, mu).value


@dataclass(eq=False)
class SourceSet:
    """Sources, budget ``Omega`` and per-source rate bounds.

    ``rho_l`` defaults to ``min(1e-3, Omega / (100 C))`` and ``rho_u`` to
    ``Omega``.
    """

    sources: list
    Omega: float
    rho_l: float | None = None
    rho_u: float | None = None
    grid_size: int = 400
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        C = len(self.sources)
        if C < 1:
            raise ValueError("need at least one source")
        if not self.Omega > 0:
            raise ValueError("Omega must be positive")
        w = np.array([s.weight for s in self.sources], dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be nonnegative and sum to 1 (sum={w.sum():.12g})")
        if self.rho_l is None:
            self.rho_l = min(1e-3, self.Omega / (100.0 * C))
        if self.rho_u is None:
            self.rho_u = self.Omega
        if not 0 < self.rho_l < self.Omega:
            raise ValueError("need 0 < rho_l < Omega")
        if self.rho_u <= self.rho_l:
            raise ValueError("need rho_u > rho_l")

    @property
    def size(self) -> int:
        return len(self.sources)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.sources], dtype=float)

    @property
    def grid(self) -> np.ndarray:
        if "grid" not in self._cache:
            self._cache["grid"] = np.geomspace(self.rho_l, self.rho_u, self.grid_size)
        return self._cache["grid"]

    def grid_values(self, i: int) -> np.ndarray:
        """``w_i MBF_i`` on the shared grid, computed once."""
        key = ("grid", i)
        if key not in self._cache:
            s = self.sources[i]
            self._cache[key] = s.weight * np.array([s.mbf(m) for m in self.grid])
        return self._cache[key]

    def per_source(self, rates) -> np.ndarray:
        return np.array([s.mbf(m) for s, m in zip(self.sources, rates)])

    def objective(self, rates) -> float:
        return float(self.weights @ self.per_source(rates))


@dataclass(frozen=True, eq=False)
class Allocation:
    rates: np.ndarray
    objective: float
    total: float
    theta: float = 0.0
    per_source: np.ndarray | None = None
    branch: str = ""
    history: list = field(default_factory=list)


def _allocation(ss: SourceSet, rates, theta=0.0, branch="", history=()):
    rates = np.asarray(rates, dtype=float)
    per = ss.per_source(rates)
    return Allocation(rates, float(ss.weights @ per), float(rates.sum()), theta, per, branch,
                      list(history))


def _golden_max(f, a, b, tol=1e-10, max_iter=200):
    """Golden-section search for a maximum of ``f`` on ``[a, b]``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def per_source_maximizer(ss: SourceSet, i: int, theta: float) -> float:
    """``argmax_mu w_i MBF_i(mu) - theta mu`` over ``[rho_l, rho_u]``.

    The smallest grid maximizer is refined by one golden-section pass over
    its two neighbouring cells.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    grid = ss.grid
    vals = ss.grid_values(i) - theta * grid
    k = int(np.argmax(vals))
    src = ss.sources[i]
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    if hi <= lo:
        return float(grid[k])
    x, fx = _golden_max(lambda m: src.weight * src.mbf(m) - theta * m, lo, hi)
    return float(x) if fx > vals[k] else float(grid[k])


def maximizers(ss: SourceSet, theta: float) -> np.ndarray:
    return np.array([per_source_maximizer(ss, i, theta) for i in range(ss.size)])


def lagrangian_bisection(ss: SourceSet, eps1: float = 1e-5, eps2: float = 1e-3, *,
                         theta_u: float | None = None, max_polish: int = 200) -> Allocation:
    """Budgeted allocation by bisection on the multiplier ``theta``.

    ``history`` lists every visited ``(theta, J)``.  ``branch`` records the
    exit: ``"unconstrained"``, ``"exact"``, ``"bisection"`` or ``"pgd"``.
    When the lower end of the final bracket overshoots the budget by more
    than ``BUDGET_TOL`` the bracket keeps shrinking, and the upper end is
    returned if that does not help.
    """
    history = []

    def at(theta):
        m = maximizers(ss, theta)
        history.append((theta, float(m.sum())))
        return m

    m0 = at(0.0)
    if m0.sum() <= ss.Omega:
        return _allocation(ss, m0, 0.0, "unconstrained", history)
    th_l, m_l = 0.0, m0
    if theta_u is None:
        th_u = 1.0
        m_u = at(th_u)
        while m_u.sum() > ss.Omega:
            th_l, m_l = th_u, m_u
            th_u *= 2.0
            if th_u > 1e12:
                raise InfeasibleBounds("budget cannot be met within the rate bounds")
            m_u = at(th_u)
    else:
        th_u, m_u = theta_u, at(theta_u)
    while th_u - th_l > eps1:
        th = 0.5 * (th_l + th_u)
        m = at(th)
        J = m.sum()
        if J == ss.Omega:
            return _allocation(ss, m, th, "exact", history)
        if J > ss.Omega:
            th_l, m_l = th, m
        else:
            th_u, m_u = th, m
    if m_l.sum() - m_u.sum() < eps2:
        for _ in range(max_polish):
            if m_l.sum() <= ss.Omega + BUDGET_TOL or th_u - th_l <= 1e-15 * th_u:
                break
            th = 0.5 * (th_l + th_u)
            m = at(th)
            if m.sum() > ss.Omega:
                th_l, m_l = th, m
            else:
                th_u, m_u = th, m
        if m_l.sum() <= ss.Omega + BUDGET_TOL:
            return _allocation(ss, m_l, th_l, "bisection", history)
        return _allocation(ss, m_u, th_u, "bisection", history)
    log.warning("rate gap %.3g at theta=%.6g exceeds eps2; trying projected gradient",
                m_l.sum() - m_u.sum(), th_u)
    cands = [_allocation(ss, m_u, th_u, "bisection", history)]
    if m_l.sum() <= ss.Omega + BUDGET_TOL:
        cands.append(_allocation(ss, m_l, th_l, "bisection", history))
    pgd = projected_gradient_descent(ss, m_u)
    cands.append(Allocation(pgd.rates, pgd.objective, pgd.total, th_u, pgd.per_source, "pgd",
                            list(history)))
    return max(cands, key=lambda a: a.objective)


def project_bounded_simplex(y, total: float, lo: float, hi: float) -> np.ndarray:
    """Euclidean projection onto ``{x : sum x = total, lo <= x <= hi}``.

    Water-filling: ``x = clip(y - t, lo, hi)`` with the shift ``t`` found
    by root finding on the monotone sum.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n * lo > total + 1e-12 or n * hi < total - 1e-12:
        raise InfeasibleBounds(f"sum {total} unreachable with {n} rates in [{lo}, {hi}]")
    g = lambda t: np.clip(y - t, lo, hi).sum() - total
    a, b = float(y.min() - hi), float(y.max() - lo)
    if g(a) <= 0:
        return np.full(n, hi) if n * hi <= total else np.clip(y - a, lo, hi)
    if g(b) >= 0:
        return np.full(n, lo)
    t = optimize.brentq(g, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return np.clip(y - t, lo, hi)


def projected_gradient_descent(ss: SourceSet, init, *, tol: float = 1e-7,
                               max_iter: int = 2000) -> Allocation:
    """Local maximizer of ``F`` on ``{sum mu = Omega, rho_l <= mu <= rho_u}``.

    Forward-difference gradients and a backtracking step.
    """
    if ss.size * ss.rho_l > ss.Omega:
        raise InfeasibleBounds(f"{ss.size} sources at rho_l={ss.rho_l} exceed Omega={ss.Omega}")
    hi = max(ss.rho_u, ss.Omega / ss.size)
    proj = lambda y: project_bounded_simplex(y, ss.Omega, ss.rho_l, hi)
    w = ss.weights
    x = proj(np.asarray(init, dtype=float))
    fx = ss.objective(x)
    step = 1.0
    for _ in range(max_iter):
        h = 1e-5 * x
        grad = w * (np.array([s.mbf(m) for s, m in zip(ss.sources, x + h)]) - ss.per_source(x)) / h
        moved = False
        while step > 1e-14:
            y = proj(x + step * grad)
            fy = ss.objective(y)
            if fy >= fx + 1e-4 * grad @ (y - x) and fy >= fx:
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        dx = np.linalg.norm(y - x)
        x, fx = y, fy
        step = min(2.0 * step, 1e6)
        if dx < tol:
            break
    return _allocation(ss, x, 0.0, "pgd")


def uniform_allocation(ss: SourceSet) -> Allocation:
    """Every source at ``Omega / C``."""
    r = np.clip(np.full(ss.size, ss.Omega / ss.size), ss.rho_l, max(ss.rho_u, ss.Omega / ss.size))
    return _allocation(ss, r, branch="uniform")


def weighted_allocation(ss: SourceSet) -> Allocation:
    """Source ``i`` at ``w_i Omega``."""
    r = np.clip(ss.weights * ss.Omega, ss.rho_l, max(ss.rho_u, ss.Omega))
    return _allocation(ss, r, branch="weighted")


def random_bdc(S: int, rng: np.random.Generator, low: float = 0.1, high: float = 2.0,
               label: str = "") -> Chain:
    """Birth-death chain with birth and death rates drawn from ``U(low, high)``."""
    if S < 2:
        raise ValueError("need at least two states")
    Q = np.zeros((S, S))
    up = rng.uniform(low, high, S - 1)
    down = rng.uniform(low, high, S - 1)
    for k in range(S - 1):
        Q[k, k + 1] = up[k]
        Q[k + 1, k] = down[k]
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return build_chain(Q, label)


def pmap_source(chain: Chain, weight: float, label: str = "") -> Source:
    """Source monitored with the p-MAP estimator built from its MAP points."""
    return Source(chain, PMap(pmap_from_map(chain, map_structure(chain))), weight, label)


def random_bdc_sources(C: int = 5, seed: int = 2024, sizes: Sequence[int] | None = None,
                       weights=None) -> list:
    """``C`` random BDC sources with p-MAP estimators.

    Sizes default to 4 states each and weights to ``w_i = 2i / (C (C+1))``.
    """
    rng = np.random.default_rng(seed)
    sizes = [4] * C if sizes is None else list(sizes)
    if weights is None:
        weights = 2.0 * np.arange(1, C + 1) / (C * (C + 1))
    return [pmap_source(random_bdc(s, rng, label=f"bdc{i}"), float(w), f"bdc{i}")
            for i, (s, w) in enumerate(zip(sizes, weights))]
