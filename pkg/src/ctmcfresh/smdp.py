"""Optimal state-dependent sampling rates as a semi-Markov decision process.

The decision epochs are query instants, the state is the observed source
state, and the action is the sampling rate used until the next query.
Choosing rate ``a`` in state ``s`` earns ``E[F~_{s,a}] - gamma`` over an
expected sojourn ``1/a``; the next state is drawn from the absorption
vector ``a e_s^T (aI - Q)^{-1}``.  The long-run reward is then
``MBF - gamma * omega``, so bisection on ``gamma`` enforces the budget.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .ctmc import Chain
from .errors import BracketingFailure, MaxIterationsExceeded, SingularSystem
from .freshness import expected_fresh_times
from .statedep import PerState, SemiSimple, ssp_metrics

log = logging.getLogger(__name__)

#: Relative-value ties within this tolerance keep the incumbent action.
TIE_TOL = 1e-12


def absorption_probs(chain: Chain, i: int, mu_i: float) -> np.ndarray:
    """Distribution of the next sample when sampling state ``i`` at rate ``mu_i``."""
    if not mu_i > 0:
        raise ValueError("mu_i must be positive")
    S = chain.size
    e = np.zeros(S)
    e[i] = mu_i
    try:
        p = sla.solve((mu_i * np.eye(S) - chain.Q).T, e, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    p = np.maximum(p, 0.0)
    return p / p.sum()


def default_action_grid(Omega: float, n: int = 200) -> np.ndarray:
    """``n`` log-spaced rates on ``[min(1e-3, Omega/100), 20 Omega]``."""
    if not Omega > 0:
        raise ValueError("Omega must be positive")
    lo = min(1e-3, Omega / 100.0)
    return np.geomspace(lo, 20.0 * Omega, n)


@dataclass(eq=False)
class SmdpInstance:
    """Transitions, fresh times and sojourns tabulated over an action grid.

    ``fresh[s, a]``, ``sojourn[s, a]`` and ``transition[s, a, :]`` do not
    depend on ``gamma``, so one instance serves the whole bisection.
    """

    chain: Chain
    spec: object
    actions: np.ndarray
    transition: np.ndarray
    fresh: np.ndarray
    sojourn: np.ndarray

    @classmethod
    def build(cls, chain: Chain, spec, actions) -> "SmdpInstance":
        actions = np.sort(np.asarray(actions, dtype=float))
        if actions.ndim != 1 or actions.size == 0:
            raise ValueError("action grid must be a nonempty 1-d array")
        if np.any(actions <= 0):
            raise ValueError("actions must be positive rates")
        S, A = chain.size, actions.size
        P = np.empty((S, A, S))
        F = np.empty((S, A))
        for k, a in enumerate(actions):
            F[:, k] = expected_fresh_times(chain, spec, a)
            for s in range(S):
                P[s, k] = absorption_probs(chain, s, a)
        H = np.broadcast_to(1.0 / actions, (S, A)).copy()
        return cls(chain, spec, actions, P, F, H)

    def reward(self, gamma: float) -> np.ndarray:
        return self.fresh - gamma

    def rates(self, policy: np.ndarray) -> np.ndarray:
        return self.actions[np.asarray(policy)]


@dataclass(frozen=True, eq=False)
class Evaluation:
    avg_reward: float
    relative_values: np.ndarray
    mbf: float
    omega: float


def evaluate_policy(inst: SmdpInstance, policy: np.ndarray, gamma: float) -> Evaluation:
    """Gain and relative values (last state pinned to 0) of a simple policy."""
    S = inst.chain.size
    idx = np.arange(S)
    P = inst.transition[idx, policy]
    R = inst.reward(gamma)[idx, policy]
    H = inst.sojourn[idx, policy]
    # unknowns (g, V_0, ..., V_{S-2}):  g H_s + V_s - sum_j P_sj V_j = R_s
    A = np.zeros((S, S))
    A[:, 0] = H
    A[:, 1:] = np.eye(S)[:, : S - 1] - P[:, : S - 1]
    try:
        x = sla.solve(A, R, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    g = float(x[0])
    V = np.append(x[1:], 0.0)
    omega = 1.0 / _cycle_length(P, H)
    return Evaluation(g, V, g + gamma * omega, omega)


def _cycle_length(P, H):
    S = P.shape[0]
    A = P.T - np.eye(S)
    A[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    nu = np.linalg.solve(A, b)
    return float(nu @ H)


@dataclass(frozen=True, eq=False)
class PolicySolution:
    """Solver output.

    ``policy`` is a :class:`PerState` or :class:`SemiSimple`; for a
    semi-simple result ``avg_reward`` and ``relative_values`` refer to the
    lower-rate simple policy that was randomized.
    """

    policy: object
    avg_reward: float
    relative_values: np.ndarray
    mbf: float
    omega: float
    gamma: float = 0.0
    action_index: np.ndarray | None = None
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        return "ssp" if isinstance(self.policy, SemiSimple) else "simple"

    @property
    def rates(self) -> np.ndarray:
        return np.asarray(self.policy.mu, dtype=float)


def policy_iteration(inst: SmdpInstance, gamma: float = 0.0, init=None,
                     max_iter: int = 500) -> PolicySolution:
    """Average-reward policy iteration.

    The improvement step keeps the current action when it is within
    ``TIE_TOL`` of the best; otherwise it takes the smallest maximizing rate.
    """
    S, A = inst.chain.size, inst.actions.size
    policy = np.full(S, A - 1) if init is None else np.array(init, dtype=np.int64)
    R = inst.reward(gamma)
    prev = None
    for it in range(1, max_iter + 1):
        ev = evaluate_policy(inst, policy, gamma)
        score = R + inst.transition @ ev.relative_values - ev.avg_reward * inst.sojourn
        best = score.max(axis=1)
        tol = TIE_TOL * np.maximum(1.0, np.abs(best))
        cur = score[np.arange(S), policy]
        new = np.where(cur >= best - tol, policy, np.argmax(score >= (best - tol)[:, None], axis=1))
        if np.array_equal(new, policy):
            return PolicySolution(PerState(inst.rates(policy)), ev.avg_reward, ev.relative_values,
                                  ev.mbf, ev.omega, gamma, policy.copy(), it)
        prev, policy = policy, new
    raise MaxIterationsExceeded(f"policy iteration did not settle in {max_iter} iterations",
                                last_policies=(prev, policy))


def residuals(inst: SmdpInstance, sol: PolicySolution) -> np.ndarray:
    """Relative-value equation residuals of a simple solution."""
    S = inst.chain.size
    idx = np.arange(S)
    pol = sol.action_index
    P = inst.transition[idx, pol]
    R = inst.reward(sol.gamma)[idx, pol]
    H = inst.sojourn[idx, pol]
    V = sol.relative_values
    return sol.avg_reward * H + V - R - P @ V


def solve_constrained(chain: Chain, spec, Omega: float, grid=None, eps1: float = 1e-5,
                      eps2: float = 1e-3, *, max_iter: int = 500, gamma_cap: float = 1e12,
                      instance: SmdpInstance | None = None) -> PolicySolution:
    """Best sampling policy with long-run query rate at most ``Omega``.

    Bisection on the multiplier ``gamma`` until the bracket is narrower than
    ``eps1``.  If the two bracketing policies differ in rate by less than
    ``eps2`` the feasible one is returned; otherwise the two are blended
    into a semi-simple policy meeting the budget exactly.
    """
    if not Omega > 0:
        raise ValueError("Omega must be positive")
    if not (eps1 > 0 and eps2 > 0):
        raise ValueError("eps1 and eps2 must be positive")
    if instance is None:
        instance = SmdpInstance.build(chain, spec, default_action_grid(Omega) if grid is None else grid)
    inst = instance
    if inst.actions[0] >= Omega:
        raise ValueError("smallest action must lie below Omega")
    history = []

    def solve(g, init=None):
        sol = policy_iteration(inst, g, init, max_iter)
        history.append((g, sol.omega))
        return sol

    zero = solve(0.0)
    if zero.omega <= Omega:
        return _with_history(zero, history)
    lo_sol, g_u = zero, 1.0
    hi_sol = solve(g_u, zero.action_index)
    while hi_sol.omega > Omega:
        lo_sol = hi_sol
        g_u *= 2.0
        if g_u > gamma_cap:
            raise BracketingFailure(f"no multiplier up to {gamma_cap:g} meets Omega={Omega}")
        hi_sol = solve(g_u, hi_sol.action_index)
    g_l = lo_sol.gamma
    while g_u - g_l >= eps1:
        g = 0.5 * (g_l + g_u)
        sol = solve(g, hi_sol.action_index)
        if sol.omega > Omega:
            g_l, lo_sol = g, sol
        else:
            g_u, hi_sol = g, sol
    if lo_sol.omega - hi_sol.omega < eps2:
        return _with_history(hi_sol, history)
    return _with_history(_semi_simple(inst, lo_sol, hi_sol, Omega), history)


def _with_history(sol: PolicySolution, history) -> PolicySolution:
    return PolicySolution(sol.policy, sol.avg_reward, sol.relative_values, sol.mbf, sol.omega,
                          sol.gamma, sol.action_index, sol.iterations, list(history))


def _semi_simple(inst: SmdpInstance, high: PolicySolution, low: PolicySolution,
                 Omega: float) -> PolicySolution:
    """Blend the policies just below and above the critical multiplier.

    States ``0..k-1`` take the high-rate action and the rest the low-rate
    one; the first ``k`` whose rate exceeds ``Omega`` is randomized.
    """
    S = inst.chain.size
    hi_idx, lo_idx = high.action_index, low.action_index
    prev_rate = low.omega
    for k in range(S):
        mixed = np.where(np.arange(S) <= k, hi_idx, lo_idx)
        rate = evaluate_policy(inst, mixed, 0.0).omega
        if prev_rate <= Omega < rate:
            break
        prev_rate = rate
    else:
        # rates along the sweep did not cross; keep the feasible endpoint
        log.warning("semi-simple sweep found no crossing; returning the feasible simple policy")
        return low
    mu = inst.rates(np.where(np.arange(S) < k, hi_idx, lo_idx))
    m1, m2 = inst.actions[hi_idx[k]], inst.actions[lo_idx[k]]

    def metrics(p):
        return ssp_metrics(inst.chain, inst.spec, SemiSimple(mu, k, m1, m2, p))

    a, b = 0.0, 1.0
    while b - a > 1e-10:
        m = 0.5 * (a + b)
        if metrics(m)[1] <= Omega:
            a = m
        else:
            b = m
    mbf, rate = metrics(a)
    return PolicySolution(SemiSimple(mu, k, m1, m2, a), low.avg_reward, low.relative_values,
                          mbf, rate, low.gamma, low.action_index, low.iterations)


def uniform_policy_mbf(chain: Chain, spec, Omega: float) -> float:
    """MBF of sampling every state at rate ``Omega``."""
    from .freshness import mbf

    return mbf(chain, spec, Omega).value
