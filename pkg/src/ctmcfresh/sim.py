"""Discrete-event Monte Carlo of a sampled chain and its estimator.

The simulation tracks the source state ``X``, the last sample, and the
estimate; events are source jumps, query arrivals and estimator stage
changes.  Fresh time is accumulated over exact inter-event intervals.

Replications use independent ``Philox`` streams spawned from one
``SeedSequence``, so results do not depend on scheduling.  Set
``CTMCFRESH_THREADS`` to run replications on several threads.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .ctmc import Chain
from .estimators import Erlang, Exponential, Martingale, PMap, TauMap, stages_for
from .statedep import Fixed, PerState, SemiSimple

INF = np.inf

# event codes in traces
START, JUMP, QUERY, STAGE, WARMUP, BATCH, END = range(7)
EVENT_NAMES = ("start", "jump", "query", "stage", "warmup", "batch", "end")


@dataclass(eq=False)
class SimConfig:
    """One simulation scenario.

    ``horizon`` and ``warmup`` are absolute times; ``warmup=None`` means 1%
    of the horizon.  ``policy`` is a :class:`Fixed`, :class:`PerState` or
    :class:`SemiSimple`, or a plain rate.
    """

    chain: Chain
    spec: object
    policy: object
    horizon: float
    warmup: float | None = None
    seed: int = 0
    replications: int = 1
    batches: int = 20

    def __post_init__(self):
        if isinstance(self.policy, (int, float)):
            self.policy = Fixed(float(self.policy))
        if self.warmup is None:
            self.warmup = 0.01 * self.horizon
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.batches < 2:
            raise ValueError("need at least two batches")

    @classmethod
    def in_sojourns(cls, chain: Chain, spec, policy, n: float = 1e6, **kw) -> "SimConfig":
        """Horizon of ``n`` mean sojourn times."""
        return cls(chain, spec, policy, n * chain.mean_sojourn, **kw)


@dataclass(frozen=True, eq=False)
class SimResult:
    """Pooled result over all replications.

    ``std_error`` comes from batch means pooled across replications;
    ``replication_std_error`` from the spread of replication means (``nan``
    with one replication).
    """

    empirical_mbf: float
    std_error: float
    fresh_time: float
    total_time: float
    query_count: int
    empirical_omega: float
    omega_std_error: float
    occupancy: np.ndarray
    replication_mbf: np.ndarray
    replication_std_error: float
    trace: "Trace | None" = field(default=None, repr=False)

    @property
    def ci95(self):
        h = 1.959963984540054 * self.std_error
        return (self.empirical_mbf - h, self.empirical_mbf + h)

    def z_score(self, value: float) -> float:
        return (self.empirical_mbf - value) / self.std_error


@dataclass(frozen=True, eq=False)
class Trace:
    """Event log of the first replication; row ``k`` holds the state right
    after event ``k``."""

    time: np.ndarray
    kind: np.ndarray
    x: np.ndarray
    estimate: np.ndarray
    rate: np.ndarray
    fresh_by_batch: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "event", "x", "estimate", "rate"])
        for t, k, x, e, r in zip(self.time, self.kind, self.x, self.estimate, self.rate):
            w.writerow([format(t, ".17g"), EVENT_NAMES[k], int(x), int(e), format(r, ".17g")])
        return buf.getvalue()


# --------------------------------------------------------------------------
# kernel
# --------------------------------------------------------------------------

@njit(nogil=True, cache=True)
def _pick(cum, u):
    k = 0
    while k < cum.size - 1 and u >= cum[k]:
        k += 1
    return k


@njit(nogil=True, cache=True)
def _kernel(rng, exit_rates, jump_cum, pi_cum, thr, vals, random_switch, switch_rate,
            switch_stages, i_star, mu, ssp_r, ssp_m1, ssp_m2, ssp_p, horizon, warmup,
            nbatch, trace_cap, tr_t, tr_k, tr_x, tr_e, tr_r):
    S = exit_rates.size
    fresh = np.zeros(nbatch)
    total = np.zeros(nbatch)
    queries = np.zeros(nbatch, dtype=np.int64)
    occ = np.zeros(S)
    blen = (horizon - warmup) / nbatch

    x = _pick(pi_cum, rng.random())
    last = _pick(pi_cum, rng.random())
    est = last
    t = 0.0
    t0 = 0.0
    stage = 0
    tj = rng.standard_exponential() / exit_rates[x]
    rate = mu[last]
    if last == ssp_r:
        rate = ssp_m1 if rng.random() < ssp_p else ssp_m2
    tq = rng.standard_exponential() / rate
    if random_switch:
        d = 0.0
        for _ in range(switch_stages):
            d += rng.standard_exponential()
        ts = d / switch_rate
    else:
        ts = thr[last, 1]
    # post-warmup bookkeeping: b = -1 during warmup
    b = -1
    tb = warmup
    n = 0
    if trace_cap > 0:
        tr_t[0] = t
        tr_k[0] = 0
        tr_x[0] = x
        tr_e[0] = est
        tr_r[0] = rate
    n = 1
    while True:
        tn = tj
        kind = 1
        if tq < tn:
            tn = tq
            kind = 2
        if ts < tn:
            tn = ts
            kind = 3
        if tb <= tn:
            tn = tb
            kind = 4 if b < 0 else 5
            if b == nbatch - 1:
                kind = 6
        if b >= 0:
            dt = tn - t
            total[b] += dt
            occ[x] += dt
            if x == est:
                fresh[b] += dt
        t = tn
        if kind == 1:
            r = rng.random() * 1.0
            row = jump_cum[x]
            x = _pick(row, r)
            tj = t + rng.standard_exponential() / exit_rates[x]
        elif kind == 2:
            if b >= 0:
                queries[b] += 1
            last = x
            est = x
            t0 = t
            stage = 0
            rate = mu[last]
            if last == ssp_r:
                rate = ssp_m1 if rng.random() < ssp_p else ssp_m2
            tq = t + rng.standard_exponential() / rate
            if random_switch:
                d = 0.0
                for _ in range(switch_stages):
                    d += rng.standard_exponential()
                ts = t + d / switch_rate
            else:
                ts = t0 + thr[last, 1]
        elif kind == 3:
            if random_switch:
                est = i_star
                ts = INF
            else:
                stage += 1
                est = vals[last, stage]
                ts = t0 + thr[last, stage + 1]
        else:
            b += 1
            if b < nbatch:
                tb = warmup + (b + 1) * blen if b < nbatch - 1 else horizon
        if trace_cap > 0:
            if n < trace_cap:
                tr_t[n] = t
                tr_k[n] = kind
                tr_x[n] = x
                tr_e[n] = est
                tr_r[n] = rate
            n += 1
        if kind == 6:
            break
    return fresh, total, queries, occ, n


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def _schedule_arrays(chain: Chain, spec):
    """Thresholds ``(S, K+1)`` padded with inf and values ``(S, K+1)``."""
    S = chain.size
    stages = [stages_for(spec, i, chain.i_star) for i in range(S)]
    K = max(len(s) for s in stages)
    thr = np.full((S, K + 1), INF)
    vals = np.zeros((S, K + 1), dtype=np.int64)
    for i, st in enumerate(stages):
        for k, (lo, hi, v) in enumerate(st):
            thr[i, k] = lo
            thr[i, k + 1] = hi
            vals[i, k] = v
        vals[i, len(st):] = st[-1][2]
    return thr, vals


def _policy_arrays(chain: Chain, policy):
    S = chain.size
    if isinstance(policy, Fixed):
        mu, ssp = np.full(S, float(policy.mu)), (-1, 1.0, 1.0, 1.0)
    elif isinstance(policy, PerState):
        mu, ssp = policy.rates(S).copy(), (-1, 1.0, 1.0, 1.0)
    elif isinstance(policy, SemiSimple):
        mu = np.asarray(policy.mu, dtype=float).copy()
        mu[policy.r] = policy.mu_r1
        ssp = (int(policy.r), float(policy.mu_r1), float(policy.mu_r2), float(policy.p))
    else:
        raise TypeError(f"unknown sampling policy {policy!r}")
    if mu.shape != (S,) or np.any(~(mu > 0)) or min(ssp[1], ssp[2]) <= 0:
        raise ValueError("sampling rates must be positive")
    return mu, ssp


def _prepare(config: SimConfig):
    chain, spec = config.chain, config.spec
    Q = np.asarray(chain.Q)
    S = chain.size
    exit_rates = -np.diag(Q).copy()
    jump = np.where(np.eye(S, dtype=bool), 0.0, Q) / exit_rates[:, None]
    jump_cum = np.cumsum(jump, axis=1)
    jump_cum[:, -1] = 1.0
    pi_cum = np.cumsum(chain.pi)
    pi_cum[-1] = 1.0
    if isinstance(spec, (Exponential, Erlang)):
        random_switch = True
        if isinstance(spec, Exponential):
            switch_rate, switch_stages = float(spec.lam), 1
        else:
            switch_rate, switch_stages = float(spec.lam * spec.gamma), int(spec.gamma) - 1
        thr, vals = np.zeros((S, 2)), np.zeros((S, 2), dtype=np.int64)
    elif isinstance(spec, (Martingale, TauMap, PMap)):
        random_switch, switch_rate, switch_stages = False, 1.0, 0
        thr, vals = _schedule_arrays(chain, spec)
    else:
        raise TypeError(f"unknown estimator {spec!r}")
    mu, ssp = _policy_arrays(chain, config.policy)
    return (exit_rates, jump_cum, pi_cum, thr, vals, random_switch, switch_rate,
            switch_stages, int(chain.i_star), mu) + ssp


def _streams(seed: int, n: int):
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CTMCFRESH_THREADS", "1")))
    except ValueError:
        return 1


def _run_one(args, rng, config, trace_cap):
    bufs = (np.empty(trace_cap), np.empty(trace_cap, dtype=np.int8),
            np.empty(trace_cap, dtype=np.int64), np.empty(trace_cap, dtype=np.int64),
            np.empty(trace_cap))
    if trace_cap == 0:
        bufs = (np.empty(1), np.empty(1, dtype=np.int8), np.empty(1, dtype=np.int64),
                np.empty(1, dtype=np.int64), np.empty(1))
    out = _kernel(rng, *args, float(config.horizon), float(config.warmup), int(config.batches),
                  trace_cap, *bufs)
    return out, bufs


def simulate(config: SimConfig, *, trace: bool = False, trace_cap: int = 1_000_000) -> SimResult:
    """Run all replications and pool them.

    With ``trace=True`` the first replication's events are logged (up to
    ``trace_cap`` rows; a longer run raises ``ValueError``).
    """
    args = _prepare(config)
    R = config.replications
    rngs = _streams(config.seed, R)
    caps = [trace_cap if (trace and k == 0) else 0 for k in range(R)]
    nthreads = min(_threads(), R)
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            runs = list(pool.map(lambda k: _run_one(args, rngs[k], config, caps[k]), range(R)))
    else:
        runs = [_run_one(args, rngs[k], config, caps[k]) for k in range(R)]
    fresh = np.array([r[0][0] for r in runs])
    total = np.array([r[0][1] for r in runs])
    queries = np.array([r[0][2] for r in runs])
    occ = np.sum([r[0][3] for r in runs], axis=0)

    T = total.sum()
    F = fresh.sum()
    nq = int(queries.sum())
    batch_mbf = (fresh / total).ravel()
    batch_rate = (queries / total).ravel()
    nb = batch_mbf.size
    se = float(np.std(batch_mbf, ddof=1) / np.sqrt(nb))
    se_rate = float(np.std(batch_rate, ddof=1) / np.sqrt(nb))
    rep = fresh.sum(axis=1) / total.sum(axis=1)
    rep_se = float(np.std(rep, ddof=1) / np.sqrt(R)) if R > 1 else float("nan")

    tr = None
    if trace:
        (f0, _, _, _, n), bufs = runs[0]
        if n > trace_cap:
            raise ValueError(f"trace needs {n} rows but trace_cap is {trace_cap}")
        tr = Trace(*(b[:n].copy() for b in bufs), fresh_by_batch=f0.copy())
    return SimResult(F / T, se, F, T, nq, nq / T, se_rate, occ / occ.sum(), rep, rep_se, tr)


def recompute_from_trace(trace: Trace, nbatch: int | None = None) -> float:
    """MBF of the traced replication from its event log alone.

    Uses the same interval arithmetic as the simulator, so the result
    matches ``fresh_by_batch.sum() / total`` bit for bit.
    """
    nbatch = trace.fresh_by_batch.size if nbatch is None else nbatch
    fresh = np.zeros(nbatch)
    total = np.zeros(nbatch)
    b = -1
    t, x, e = trace.time, trace.x, trace.estimate
    for k in range(1, t.size):
        if b >= 0:
            dt = t[k] - t[k - 1]
            total[b] += dt
            if x[k - 1] == e[k - 1]:
                fresh[b] += dt
        if trace.kind[k] in (WARMUP, BATCH):
            b += 1
    return float(fresh.sum() / total.sum())


def empirical_mbf(config: SimConfig) -> SimResult:
    return simulate(config)


def empirical_sweep(configs) -> str:
    """CSV table of simulation results, one row per config, in input order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    configs = list(configs)
    if not configs:
        return ""
    w.writerow(["label", "estimator", "policy", "seed", "mbf", "std_error", "omega",
                "queries", "total_time"])
    for c in configs:
        r = simulate(c)
        w.writerow([c.chain.label, estimator_name(c.spec), policy_name(c.policy), c.seed,
                    format(r.empirical_mbf, ".17g"), format(r.std_error, ".17g"),
                    format(r.empirical_omega, ".17g"), r.query_count,
                    format(r.total_time, ".17g")])
    return buf.getvalue()


def estimator_name(spec) -> str:
    return {Martingale: "me", Exponential: "expe", Erlang: "erle", TauMap: "tmap",
            PMap: "pmap"}[type(spec)]


def policy_name(policy) -> str:
    if isinstance(policy, Fixed):
        return f"fixed:{policy.mu:.17g}"
    if isinstance(policy, PerState):
        return "perstate"
    return "ssp"
