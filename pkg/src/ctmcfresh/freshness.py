"""Mean binary freshness (MBF) under a fixed, state-independent query rate.

Every estimator has a reversibility-free route and, where one exists, a
spectral fast path for reversible chains.  ``method="auto"`` picks the
spectral path when the chain allows it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy import linalg as sla

from .ctmc import Chain, discounted_integral, map_structure, transition_matrix
from .estimators import (
    DETERMINISTIC,
    Erlang,
    Exponential,
    Martingale,
    PMap,
    PMapSchedule,
    TauMap,
    stages_for,
)
from .errors import NoUniqueMaximum, RandomizedEstimatorUnsupported, SingularResolvent


@dataclass(frozen=True)
class FreshnessReport:
    """An MBF value and how it was obtained.

    ``method`` is ``"closed"`` (a closed form), ``"general"`` (the per-state
    fresh-time route) or ``"empirical"`` (simulation, with ``std_error``).
    """

    value: float
    method: str
    std_error: float | None = None

    @property
    def ci95(self):
        if self.std_error is None:
            return None
        h = 1.959963984540054 * self.std_error
        return (self.value - h, self.value + h)


def _check_mu(mu):
    if not mu > 0:
        raise ValueError(f"sampling rate must be positive, got {mu}")


def _use_spectral(chain: Chain, method: str) -> bool:
    if method == "auto":
        return chain.reversible
    if method == "spectral":
        return True
    if method in ("trace", "general"):
        return False
    raise ValueError(f"unknown method {method!r}")


def _resolvent_powers_trace(chain: Chain, c: float, n: int, scale: float) -> np.ndarray:
    """``[tr(scale^(k-1) R^k Pi) for k = 1..n]`` with ``R = (cI - Q^T)^-1``.

    Powers are applied by repeated solves against one LU factorization.
    """
    S = chain.size
    A = c * np.eye(S) - chain.Q.T
    try:
        lu = sla.lu_factor(A, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularResolvent(str(exc)) from exc
    Y = np.diag(chain.pi)
    out = np.empty(n)
    for k in range(n):
        Y = sla.lu_solve(lu, Y, check_finite=False)
        if not np.all(np.isfinite(Y)):
            raise SingularResolvent(f"resolvent solve at c={c} produced non-finite values")
        out[k] = np.trace(Y)
        Y = Y * scale
    return out


def mbf_exponential(chain: Chain, mu: float, lam: float, method: str = "auto") -> float:
    """MBF of the exponential-clock estimator (``lam = 0`` gives the martingale)."""
    _check_mu(mu)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    tail = lam / (mu + lam) * chain.pi[chain.i_star]
    if _use_spectral(chain, method):
        sd = chain.spectral
        return float(np.sum(sd.a * mu / (sd.d + mu + lam)) + tail)
    return float(mu * _resolvent_powers_trace(chain, mu + lam, 1, 1.0)[0] + tail)


def mbf_martingale(chain: Chain, mu: float, method: str = "auto") -> float:
    return mbf_exponential(chain, mu, 0.0, method)


def mbf_erlang(chain: Chain, mu: float, gamma: int, lam: float, method: str = "auto") -> float:
    """MBF of the Erlang estimator with ``gamma`` auxiliary states."""
    _check_mu(mu)
    if int(gamma) != gamma or gamma < 2:
        raise ValueError("gamma must be an integer >= 2")
    if not lam > 0:
        raise ValueError("lam must be positive")
    gamma = int(gamma)
    rate = lam * gamma
    tail = (rate / (mu + rate)) ** (gamma - 1) * chain.pi[chain.i_star]
    if _use_spectral(chain, method):
        sd = chain.spectral
        body = sd.a * mu / (sd.d + mu) * (1.0 - (rate / (sd.d + mu + rate)) ** (gamma - 1))
        return float(body.sum() + tail)
    traces = _resolvent_powers_trace(chain, mu + rate, gamma - 1, rate)
    return float(mu * traces.sum() + tail)


def mbf_tau_map(chain: Chain, mu: float, tau: float, method: str = "auto") -> float:
    """MBF of the two-stage estimator switching to ``i_star`` after age ``tau``."""
    _check_mu(mu)
    if not tau >= 0:
        raise ValueError("tau must be nonnegative")
    if _use_spectral(chain, method):
        sd = chain.spectral
        r = sd.d + mu
        body = sd.a * mu / r * (1.0 - np.exp(-r * tau))
        return float(body.sum() + np.exp(-mu * tau) * chain.pi[chain.i_star])
    return mbf_general(chain, TauMap(tau), mu)


def mbf_pmap(chain: Chain, mu: float, schedule: PMapSchedule, method: str = "auto") -> float:
    """MBF of a p-MAP estimator with the given stage schedule."""
    _check_mu(mu)
    if schedule.size != chain.size:
        raise ValueError("schedule size does not match the chain")
    if not _use_spectral(chain, method):
        return mbf_general(chain, PMap(schedule), mu)
    sd = chain.spectral
    total = 0.0
    for i in range(chain.size):
        for lo, hi, v in schedule.stages(i):
            if hi <= lo:
                continue
            r = sd.d + mu
            a_ijk = sd.sqrt_pi[i] * sd.sqrt_pi[v] * sd.U[i] * sd.U[v]
            total += np.sum(a_ijk * mu / r * (np.exp(-r * lo) - np.exp(-r * hi)))
    return float(total)


# --------------------------------------------------------------------------
# per-state fresh time
# --------------------------------------------------------------------------

def _quad_stage(chain, mu, i, v, lo, hi):
    if np.isinf(hi):
        # tail mass beyond T is at most e^{-mu T} / mu
        hi = max(lo, -np.log(1e-13 * mu) / mu)
    f = lambda t: transition_matrix(chain, t)[i, v] * np.exp(-mu * t)
    val, _ = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-11, limit=400)
    return val


def expected_fresh_times(chain: Chain, spec, mu: float, method: str = "auto") -> np.ndarray:
    """Expected fresh time until the next query, for every starting state.

    ``method`` is ``"spectral"`` (reversible chains), ``"resolvent"`` (exact
    for any chain), ``"quadrature"`` (adaptive numerical integration, slow)
    or ``"auto"``.
    """
    _check_mu(mu)
    if not isinstance(spec, DETERMINISTIC):
        raise RandomizedEstimatorUnsupported(
            f"{type(spec).__name__} has a random switching time; use its closed form")
    if method == "auto":
        method = "spectral" if chain.reversible else "resolvent"
    S = chain.size
    out = np.zeros(S)
    if method == "quadrature":
        for i in range(S):
            for lo, hi, v in stages_for(spec, i, chain.i_star):
                if hi > lo:
                    out[i] += _quad_stage(chain, mu, i, v, lo, hi)
        return out
    if method == "spectral":
        sd = chain.spectral
        r = sd.d + mu
        for i in range(S):
            for lo, hi, v in stages_for(spec, i, chain.i_star):
                if hi > lo:
                    out[i] += np.sum(sd.coefficients(i, v) * (np.exp(-r * lo) - np.exp(-r * hi)) / r)
        return out
    if method != "resolvent":
        raise ValueError(f"unknown method {method!r}")
    # Group stages by boundary so each P(t) is computed once.
    cache = {}
    for i in range(S):
        for lo, hi, v in stages_for(spec, i, chain.i_star):
            if hi <= lo:
                continue
            key = (float(lo), float(hi))
            if key not in cache:
                cache[key] = discounted_integral(chain, mu, lo, hi)
            out[i] += cache[key][i, v]
    return out


def expected_fresh_time(chain: Chain, spec, i: int, mu: float, method: str = "auto") -> float:
    return float(expected_fresh_times(chain, spec, mu, method)[i])


def mbf_general(chain: Chain, spec, mu: float, method: str = "auto") -> float:
    """``mu * sum_i pi_i E[F_i]`` for any deterministic estimator."""
    F = expected_fresh_times(chain, spec, mu, method)
    return float(mu * np.dot(chain.pi, F))


def mbf(chain: Chain, spec, mu: float, method: str = "auto") -> FreshnessReport:
    """Dispatch to the closed form matching ``spec``."""
    if method == "general":
        if isinstance(spec, Exponential):
            return FreshnessReport(mbf_exponential(chain, mu, spec.lam, "trace"), "general")
        if isinstance(spec, Erlang):
            return FreshnessReport(mbf_erlang(chain, mu, spec.gamma, spec.lam, "trace"), "general")
        return FreshnessReport(mbf_general(chain, spec, mu, "resolvent"), "general")
    if isinstance(spec, Martingale):
        v = mbf_martingale(chain, mu, method)
    elif isinstance(spec, Exponential):
        v = mbf_exponential(chain, mu, spec.lam, method)
    elif isinstance(spec, Erlang):
        v = mbf_erlang(chain, mu, spec.gamma, spec.lam, method)
    elif isinstance(spec, TauMap):
        if not chain.reversible:
            return FreshnessReport(mbf_general(chain, spec, mu), "general")
        v = mbf_tau_map(chain, mu, spec.tau, method)
    elif isinstance(spec, PMap):
        if not chain.reversible:
            return FreshnessReport(mbf_general(chain, spec, mu), "general")
        v = mbf_pmap(chain, mu, spec.schedule, method)
    else:
        raise TypeError(f"unknown estimator {spec!r}")
    return FreshnessReport(v, "closed")


def verify_martingale_vs_taustar(chain: Chain, mu: float, map_=None):
    """``(MBF of the martingale, MBF of tau-MAP at tau = tau*)``.

    The second never falls below the first when the stationary maximum is
    unique.
    """
    if not chain.unique_max:
        raise NoUniqueMaximum("tau* exists only with a unique stationary maximum")
    if map_ is None:
        map_ = map_structure(chain)
    tau = map_.global_tau_star
    me = mbf_martingale(chain, mu)
    tm = mbf_tau_map(chain, mu, tau) if chain.reversible else mbf_general(chain, TauMap(tau), mu)
    return me, tm
