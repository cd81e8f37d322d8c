"""Freshness when the query rate depends on the last observed state.

The pair (source state, martingale estimate) is itself a CTMC on S*S
states, indexed row-major as ``i * S + j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import Chain
from .estimators import Martingale, PMap, TauMap
from .errors import NonpositiveRate, SingularSystem
from .freshness import expected_fresh_times


@dataclass(frozen=True)
class Fixed:
    mu: float

    def rates(self, size: int) -> np.ndarray:
        return np.full(size, float(self.mu))


@dataclass(frozen=True, eq=False)
class PerState:
    mu: np.ndarray

    def rates(self, size: int) -> np.ndarray:
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (size,):
            raise ValueError(f"expected {size} rates, got shape {mu.shape}")
        return mu


@dataclass(frozen=True, eq=False)
class SemiSimple:
    """Per-state rates except in state ``r``, where each visit samples at
    ``mu_r1`` with probability ``p`` and at ``mu_r2`` otherwise."""

    mu: np.ndarray
    r: int
    mu_r1: float
    mu_r2: float
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def effective_rates(self) -> np.ndarray:
        mu = np.array(self.mu, dtype=float)
        mu[self.r] = self.p * self.mu_r1 + (1 - self.p) * self.mu_r2
        return mu

    def branch(self, rate: float) -> np.ndarray:
        mu = np.array(self.mu, dtype=float)
        mu[self.r] = rate
        return mu


SamplingPolicy = Fixed | PerState | SemiSimple


@dataclass(frozen=True, eq=False)
class JointStationary:
    psi: np.ndarray
    pi_tilde: np.ndarray
    omega: float


def _check_rates(chain: Chain, rates) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (chain.size,):
        raise ValueError(f"expected {chain.size} rates, got shape {rates.shape}")
    if np.any(~(rates > 0)) or not np.all(np.isfinite(rates)):
        raise NonpositiveRate(f"all sampling rates must be positive and finite: {rates}")
    return rates


def build_joint_generator(chain: Chain, rates) -> np.ndarray:
    """Generator of (source, martingale estimate) under per-state rates.

    A query in pair ``(i, j)`` fires at rate ``mu_j`` and moves to
    ``(i, i)``; source jumps move the first coordinate only.
    """
    rates = _check_rates(chain, rates)
    S = chain.size
    Q = np.asarray(chain.Q)
    QM = np.zeros((S * S, S * S))
    for i in range(S):
        for j in range(S):
            row = i * S + j
            for k in range(S):
                if k != i:
                    QM[row, k * S + j] = Q[i, k]
            if i != j:
                QM[row, i * S + i] = rates[j]
            QM[row, row] = -QM[row].sum()
    return QM


def joint_stationary(chain: Chain, rates) -> JointStationary:
    rates = _check_rates(chain, rates)
    S = chain.size
    A = build_joint_generator(chain, rates).T
    A[-1, :] = 1.0
    b = np.zeros(S * S)
    b[-1] = 1.0
    try:
        psi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(psi)):
        raise SingularSystem("joint stationary solve produced non-finite values")
    psi = np.maximum(psi, 0.0).reshape(S, S)
    psi /= psi.sum()
    pi_tilde = psi.sum(axis=0)
    return JointStationary(psi, pi_tilde, float(pi_tilde @ rates))


def _fresh_under_rates(chain, spec, rates, method):
    """``E[F_{i, mu_i}]`` for each state, each at its own rate."""
    out = np.empty(chain.size)
    cache = {}
    for i, m in enumerate(rates):
        if m not in cache:
            cache[m] = expected_fresh_times(chain, spec, m, method)
        out[i] = cache[m][i]
    return out


def mbf_statedep_general(chain: Chain, spec, rates, method: str = "auto") -> float:
    """``sum_i mu_i pi~_i E[F_{i, mu_i}]`` for any deterministic estimator."""
    rates = _check_rates(chain, rates)
    js = joint_stationary(chain, rates)
    F = _fresh_under_rates(chain, spec, rates, method)
    return float(np.sum(rates * js.pi_tilde * F))


def mbf_statedep(chain: Chain, spec, policy, method: str = "auto") -> float:
    """MBF under a per-state policy (a :class:`PerState`, :class:`Fixed` or
    a plain rate vector)."""
    if isinstance(policy, SemiSimple):
        return ssp_metrics(chain, spec, policy)[0]
    rates = policy.rates(chain.size) if hasattr(policy, "rates") else policy
    rates = _check_rates(chain, rates)
    js = joint_stationary(chain, rates)
    if isinstance(spec, Martingale) and method in ("auto", "joint"):
        return float(np.trace(js.psi))
    use_closed = chain.reversible and method in ("auto", "spectral")
    if use_closed and isinstance(spec, TauMap):
        sd = chain.spectral
        istar = chain.i_star
        total = 0.0
        for i in range(chain.size):
            r = sd.d + rates[i]
            base = js.pi_tilde[i] * sd.U[i] ** 2
            b = base - sd.sqrt_pi[istar] * sd.inv_sqrt_pi[i] * js.pi_tilde[i] * sd.U[i] * sd.U[istar]
            total += np.sum(rates[i] / r * (base - b * np.exp(-r * spec.tau)))
        return float(total)
    if use_closed and isinstance(spec, PMap):
        sd = chain.spectral
        total = 0.0
        for i in range(chain.size):
            r = sd.d + rates[i]
            for lo, hi, v in spec.schedule.stages(i):
                if hi <= lo:
                    continue
                a = sd.sqrt_pi[v] * sd.inv_sqrt_pi[i] * js.pi_tilde[i] * sd.U[i] * sd.U[v]
                total += np.sum(a * rates[i] / r * (np.exp(-r * lo) - np.exp(-r * hi)))
        return float(total)
    F = _fresh_under_rates(chain, spec, rates, "auto" if method in ("auto", "joint") else method)
    return float(np.sum(rates * js.pi_tilde * F))


def omega(chain: Chain, rates) -> float:
    """Long-run query rate of a per-state policy."""
    return joint_stationary(chain, rates).omega


# --------------------------------------------------------------------------
# semi-simple policies
# --------------------------------------------------------------------------

def _absorption_matrix(chain: Chain, rates) -> np.ndarray:
    """Row ``i``: distribution of the next sample given the last was ``i``."""
    S = chain.size
    out = np.empty((S, S))
    Q = np.asarray(chain.Q)
    for i, m in enumerate(rates):
        e = np.zeros(S)
        e[i] = m
        out[i] = np.linalg.solve((m * np.eye(S) - Q).T, e)
    return out


def _ssp_theorem(chain: Chain, spec, policy: SemiSimple):
    """``(MBF, average rate)`` from the effective-rate joint chain.

    Sample counts per state are taken from the joint chain run at the
    averaged rate ``p mu_r1 + (1-p) mu_r2`` in state ``r``.  Exact at
    ``p in {0, 1}``; otherwise it ignores that the randomization also mixes
    the distribution of the next sample.
    """
    r, m1, m2, p = policy.r, policy.mu_r1, policy.mu_r2, policy.p
    mu_eff = policy.effective_rates()
    js = joint_stationary(chain, mu_eff)
    pt = js.pi_tilde
    F = _fresh_under_rates(chain, spec, mu_eff, "auto")
    F1 = expected_fresh_times(chain, spec, m1)[r]
    F2 = expected_fresh_times(chain, spec, m2)[r]
    others = sum(mu_eff[i] * pt[i] * F[i] for i in range(chain.size) if i != r)
    num = m1 * m2 * (mu_eff[r] * pt[r] * (p * F1 + (1 - p) * F2) + others)
    den = (1 - pt[r]) * m1 * m2 + pt[r] * (p * m1 + (1 - p) * m2) * (p * m2 + (1 - p) * m1)
    rate = m1 * m2 * float(pt @ mu_eff) / den
    return float(num / den), float(rate)


def ssp_metrics(chain: Chain, spec, policy: SemiSimple, method: str = "exact"):
    """``(MBF, average rate)`` of a semi-simple policy.

    ``method="exact"`` is a renewal-reward evaluation on the chain of
    observed states: the randomization in state ``r`` mixes the next-sample
    distribution as well as the fresh and sojourn times of that visit.
    ``method="effective"`` uses the averaged-rate approximation.
    """
    if method == "effective":
        return _ssp_theorem(chain, spec, policy)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    r, m1, m2, p = policy.r, policy.mu_r1, policy.mu_r2, policy.p
    P1 = _absorption_matrix(chain, policy.branch(m1))
    P2 = _absorption_matrix(chain, policy.branch(m2))
    P = P1.copy()
    P[r] = p * P1[r] + (1 - p) * P2[r]
    S = chain.size
    A = P.T - np.eye(S)
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    nu = np.linalg.solve(A, b)
    mu = np.asarray(policy.mu, dtype=float).copy()
    mu[r] = m1
    F = _fresh_under_rates(chain, spec, mu, "auto")
    F[r] = p * F[r] + (1 - p) * expected_fresh_times(chain, spec, m2)[r]
    H = 1.0 / mu
    H[r] = p / m1 + (1 - p) / m2
    cycle = float(nu @ H)
    return float(nu @ F) / cycle, 1.0 / cycle
