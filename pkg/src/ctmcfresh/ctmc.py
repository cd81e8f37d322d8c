"""Finite irreducible CTMCs: validation, stationary analysis, transition
matrices, spectral structure of reversible chains and the MAP estimate.

States are indexed from 0. All objects are immutable once built.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg as sla
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .errors import (
    HorizonRequired,
    NegativeOffDiagonal,
    NegativeTime,
    NotIrreducible,
    NotReversible,
    RowSumViolation,
)

ROW_SUM_TOL = 1e-12
REVERSIBLE_TOL = 1e-9
PI_TIE_TOL = 1e-12
BISECT_TOL = 1e-9

# Poisson mass dropped on each side of the uniformization sum.  The left tail
# multiplies O(1) matrix powers, so it is cut much deeper than the right.
_LEFT_TAIL = 1e-30
_RIGHT_TAIL = 1e-16


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Chain:
    """Validated generator matrix with its cached stationary distribution.

    Build instances with :func:`build_chain`; the constructor does not
    validate.
    """

    Q: np.ndarray
    pi: np.ndarray
    reversible: bool
    label: str = ""

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    @cached_property
    def exit_rates(self) -> np.ndarray:
        return _frozen(-np.diag(self.Q))

    @cached_property
    def i_star(self) -> int:
        """Largest-index maximizer of the stationary distribution."""
        top = self.pi.max()
        return int(np.flatnonzero(self.pi >= top - PI_TIE_TOL)[-1])

    @cached_property
    def unique_max(self) -> bool:
        top = self.pi.max()
        return int(np.count_nonzero(self.pi >= top - PI_TIE_TOL)) == 1

    @cached_property
    def mean_sojourn(self) -> float:
        """Long-run mean time between source transitions."""
        return 1.0 / float(self.pi @ self.exit_rates)

    @cached_property
    def _uniformized(self):
        lam = float(self.exit_rates.max())
        K = np.eye(self.size) + self.Q / lam
        M = K - np.outer(np.ones(self.size), self.pi)
        return lam, M

    @cached_property
    def spectral(self) -> "SpectralDecomposition":
        return spectral_decomposition(self)

    def __repr__(self):
        return f"Chain(label={self.label!r}, size={self.size}, reversible={self.reversible})"


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenstructure of the symmetrized generator of a reversible chain.

    ``Pi^(1/2) Q Pi^(-1/2) = -U diag(d) U^T``.  ``d`` is sorted ascending so
    ``d[0] == 0`` is the stationary mode.
    """

    U: np.ndarray
    d: np.ndarray
    a: np.ndarray
    pi: np.ndarray
    sqrt_pi: np.ndarray
    inv_sqrt_pi: np.ndarray

    def coefficients(self, i: int, j: int) -> np.ndarray:
        """Weights ``c_k`` with ``P_ij(t) = sum_k c_k exp(-d_k t)``."""
        return self.sqrt_pi[j] * self.inv_sqrt_pi[i] * self.U[i] * self.U[j]

    def transition_matrix(self, t: float) -> np.ndarray:
        P = (self.U * np.exp(-self.d * t)) @ self.U.T
        return P * self.inv_sqrt_pi[:, None] * self.sqrt_pi[None, :]

    def deviation(self, t) -> np.ndarray:
        """``P(t) - 1 pi^T`` from the non-stationary modes only.

        ``t`` may be an array, in which case the result has shape
        ``(len(t), S, S)``.
        """
        Un = self.U[:, 1:]
        e = np.exp(-np.multiply.outer(np.atleast_1d(t), self.d[1:]))
        D = np.einsum("ik,nk,jk->nij", Un, e, Un)
        D *= self.inv_sqrt_pi[None, :, None] * self.sqrt_pi[None, None, :]
        return D if np.ndim(t) else D[0]


def _stationary(Q: np.ndarray) -> np.ndarray:
    S = Q.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def build_chain(Q, label: str = "") -> Chain:
    """Validate a rate matrix and return an immutable :class:`Chain`.

    Raises
    ------
    RowSumViolation, NegativeOffDiagonal, NotIrreducible
    """
    Q = np.array(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"rate matrix must be square, got shape {Q.shape}")
    S = Q.shape[0]
    if S < 2:
        raise ValueError("a chain needs at least two states")
    if not np.all(np.isfinite(Q)):
        raise ValueError("rate matrix has non-finite entries")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise NegativeOffDiagonal(f"q[{i},{j}] = {Q[i, j]} < 0")
    scale = max(1.0, float(np.abs(Q).max()))
    rows = np.abs(Q.sum(axis=1))
    if rows.max() > ROW_SUM_TOL * scale:
        i = int(rows.argmax())
        raise RowSumViolation(f"row {i} sums to {Q[i].sum():.3e}, expected 0")
    n, _ = connected_components(off > 0, directed=True, connection="strong")
    if n != 1:
        raise NotIrreducible(f"support graph has {n} strongly connected components")
    pi = _stationary(Q)
    if np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-12 or np.abs(pi @ Q).max() > 1e-10:
        raise NotIrreducible("stationary solve did not yield a positive distribution")
    flux = pi[:, None] * off
    reversible = bool(np.abs(flux - flux.T).max() <= REVERSIBLE_TOL)
    return Chain(_frozen(Q), _frozen(pi), reversible, label)


def chain_from_rates(rates, label: str = "") -> Chain:
    """Build a chain from off-diagonal rates; the diagonal is recomputed."""
    R = np.array(rates, dtype=float)
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, -R.sum(axis=1))
    return build_chain(R, label)


def _poisson_window(m: float):
    if m == 0.0:
        return 0, np.ones(1)
    lo = int(poisson.ppf(_LEFT_TAIL, m))
    hi = int(poisson.isf(_RIGHT_TAIL, m))
    k = np.arange(lo, hi + 1)
    return lo, poisson.pmf(k, m)


def deviation_matrix(chain: Chain, t: float) -> np.ndarray:
    """``P(t) - 1 pi^T`` by uniformization.

    Uses ``(K - 1 pi^T)^k = K^k - 1 pi^T`` for ``k >= 1`` so that the
    transient part is accumulated directly and keeps relative accuracy when
    it is much smaller than ``pi``.
    """
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    lam, M = chain._uniformized
    lo, w = _poisson_window(lam * t)
    term = np.linalg.matrix_power(M, lo)
    D = w[0] * term
    for wk in w[1:]:
        term = term @ M
        D += wk * term
    if lo == 0:
        D -= w[0] * np.outer(np.ones(chain.size), chain.pi)
    return D


def transition_matrix(chain: Chain, t: float) -> np.ndarray:
    """``P(t) = exp(Qt)`` by uniformization (truncation error < 1e-12)."""
    P = deviation_matrix(chain, t) + chain.pi[None, :]
    np.clip(P, 0.0, 1.0, out=P)
    return P


def spectral_decomposition(chain: Chain) -> SpectralDecomposition:
    if not chain.reversible:
        raise NotReversible(f"{chain.label or 'chain'} violates detailed balance")
    pi = np.asarray(chain.pi)
    s = np.sqrt(pi)
    A = s[:, None] * chain.Q / s[None, :]
    A = 0.5 * (A + A.T)
    w, U = sla.eigh(A)
    d = -w
    order = np.argsort(d)
    d, U = d[order], U[:, order]
    d[0] = 0.0
    np.maximum(d, 0.0, out=d)
    if U[:, 0].sum() < 0:
        U[:, 0] = -U[:, 0]
    a = (pi[:, None] * U**2).sum(axis=0)
    return SpectralDecomposition(
        _frozen(U), _frozen(d), _frozen(a), chain.pi, _frozen(s), _frozen(1.0 / s)
    )


def discounted_integral(chain: Chain, mu: float, lo: float, hi: float) -> np.ndarray:
    """``int_lo^hi P(t) exp(-mu t) dt`` as an S x S matrix.

    Reversible chains use the spectral antiderivative; other chains the exact
    resolvent identity ``(mu I - Q)^-1 (e^{-mu lo} P(lo) - e^{-mu hi} P(hi))``.
    """
    if lo >= hi:
        return np.zeros((chain.size, chain.size))
    if chain.reversible:
        sd = chain.spectral
        r = sd.d + mu
        w = (np.exp(-r * lo) - np.exp(-r * hi)) / r
        M = (sd.U * w) @ sd.U.T
        return M * sd.inv_sqrt_pi[:, None] * sd.sqrt_pi[None, :]
    rhs = np.exp(-mu * lo) * transition_matrix(chain, lo)
    if np.isfinite(hi):
        rhs -= np.exp(-mu * hi) * transition_matrix(chain, hi)
    return np.linalg.solve(mu * np.eye(chain.size) - chain.Q, rhs)


# --------------------------------------------------------------------------
# MAP estimate
# --------------------------------------------------------------------------

def _map_argmax(pi: np.ndarray, dev_rows: np.ndarray) -> np.ndarray:
    """Row-wise argmax of ``pi + dev`` with lowest-index tie breaking.

    ``dev_rows`` has shape ``(n, S)``.  Stationary masses closer than
    ``PI_TIE_TOL`` are treated as equal so that the comparison falls to the
    transient part, which keeps full relative precision at large times.
    """
    n, S = dev_rows.shape
    scale = np.abs(dev_rows).max(axis=1) * 1e-12
    best = np.zeros(n, dtype=np.int64)
    for j in range(1, S):
        dpi = pi[j] - pi[best]
        dpi = np.where(np.abs(dpi) <= PI_TIE_TOL, 0.0, dpi)
        diff = dpi + (dev_rows[:, j] - dev_rows[np.arange(n), best])
        best = np.where(diff > scale, j, best)
    return best


def _deviation_rows(chain: Chain, i: int, times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if chain.reversible:
        return chain.spectral.deviation(times)[:, i, :]
    return np.array([deviation_matrix(chain, t)[i] for t in times])


def _deviation_grid(chain: Chain, times: np.ndarray) -> np.ndarray:
    """Deviation matrices on a uniform grid starting at 0."""
    if chain.reversible:
        return chain.spectral.deviation(times)
    step = times[1] - times[0] if len(times) > 1 else 0.0
    Dstep = deviation_matrix(chain, step)
    out = np.empty((len(times), chain.size, chain.size))
    out[0] = deviation_matrix(chain, times[0])
    for n in range(1, len(times)):
        out[n] = out[n - 1] @ Dstep
    return out


def map_estimate(chain: Chain, i: int, t: float) -> int:
    """MAP estimate of ``X(t)`` given ``X(0) = i`` (lowest index on ties)."""
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    return int(_map_argmax(np.asarray(chain.pi), _deviation_rows(chain, i, [t]))[0])


def certified_horizon(chain: Chain) -> float:
    """A time after which the MAP estimate is ``i_star`` from every state.

    The max-abs-row-sum norm of ``P(t) - 1 pi^T`` is non-increasing in ``t``
    (right multiplication by a stochastic matrix), so once it drops below the
    gap between the two largest stationary masses the argmax is frozen.
    """
    if not chain.unique_max:
        raise HorizonRequired("no unique stationary maximum; give the horizon explicitly")
    pi = np.sort(np.asarray(chain.pi))
    gap = pi[-1] - pi[-2]

    def norm(t):
        if chain.reversible:
            D = chain.spectral.deviation(t)
        else:
            D = deviation_matrix(chain, t)
        return np.abs(D).sum(axis=1).max()

    t = 1.0 / float(chain.exit_rates.max())
    for _ in range(200):
        if norm(t) < gap:
            return t
        t *= 2.0
    raise HorizonRequired("mixing too slow to certify a horizon")


@dataclass(frozen=True, eq=False)
class MapStructure:
    """Piecewise-constant MAP estimate per starting state.

    ``map_value[i][k]`` holds on ``[tau_star[i][k-1], tau_star[i][k])`` with
    the conventions ``tau_star[i][-1] = 0`` and an open last interval.
    """

    tau_star: tuple
    map_value: tuple
    global_tau_star: float
    i_star: int
    unique_max: bool
    horizon: float

    def value(self, i: int, t: float) -> int:
        k = int(np.searchsorted(self.tau_star[i], t, side="right"))
        return int(self.map_value[i][k])


def _refine(chain, i, lo, hi, a, tol):
    pi = np.asarray(chain.pi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _map_argmax(pi, _deviation_rows(chain, i, [mid]))[0] == a:
            lo = mid
        else:
            hi = mid
    return lo, hi


def map_structure(chain: Chain, horizon: float | None = None,
                  grid_step: float | None = None, tol: float = BISECT_TOL) -> MapStructure:
    """Locate the transition points of the MAP estimate on ``[0, horizon]``.

    Argmax changes are detected on a uniform grid (default step
    ``horizon / 2000``) and each is refined by bisection to ``tol``.  When
    ``horizon`` is omitted a certified one is used, which requires a unique
    stationary maximum.
    """
    if horizon is None:
        horizon = certified_horizon(chain)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if grid_step is None:
        grid_step = horizon / 2000.0
    n = int(np.ceil(horizon / grid_step))
    times = np.linspace(0.0, horizon, n + 1)
    pi = np.asarray(chain.pi)
    D = _deviation_grid(chain, times)
    taus, vals = [], []
    for i in range(chain.size):
        am = _map_argmax(pi, D[:, i, :])
        am[0] = i
        pts, values = [], [i]
        for c in np.flatnonzero(am[1:] != am[:-1]):
            lo, hi, cur = times[c], times[c + 1], values[-1]
            # more than one switch can hide inside a cell
            while True:
                lo, hi = _refine(chain, i, lo, hi, cur, tol)
                nxt = int(_map_argmax(pi, _deviation_rows(chain, i, [hi]))[0])
                if nxt == cur:
                    break
                pts.append(0.5 * (lo + hi))
                values.append(nxt)
                cur = nxt
                if cur == am[c + 1] or hi >= times[c + 1]:
                    break
                lo, hi = hi, times[c + 1]
        taus.append(_frozen(pts))
        vals.append(np.array(values, dtype=np.int64))
    last = [t[-1] for t in taus if len(t)]
    return MapStructure(
        tuple(taus), tuple(vals), float(max(last)) if last else 0.0,
        chain.i_star, chain.unique_max, float(horizon),
    )
