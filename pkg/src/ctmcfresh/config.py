"""TOML scenario files.

A scenario has up to four tables::

    [chain]            # preset = "fig6a", or Q = [[...]], or rates = [[...]]
    [estimator]        # kind = "me" | "expe" | "erle" | "tmap" | "pmap"
    [policy]           # kind = "fixed" | "perstate" | "ssp"
    [sim]              # horizon or sojourns, warmup, seed, replications

Multi-source files use ``[multi]`` plus one ``[[source]]`` table per chain.
States are numbered from 0.
"""
from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ctmc import Chain, build_chain, chain_from_rates, map_structure
from .errors import ChainError, ConfigError, InvalidThresholds
from .estimators import (
    INF, Erlang, Exponential, Martingale, PMap, PMapSchedule, TauMap, pmap_from_map,
)
from .presets import PRESETS, preset
from .statedep import Fixed, PerState, SemiSimple

ESTIMATORS = ("me", "expe", "erle", "tmap", "pmap")


def load(path) -> dict:
    """Parse a TOML file, reporting syntax errors with their location."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def loads(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(exc)) from None


def _get(table: dict, key: str, where: str, kind=float, default=...):
    if key not in table:
        if default is ...:
            raise ConfigError(f"[{where}] missing required field '{key}'")
        return default
    v = table[key]
    ok = not isinstance(v, bool) and (
        (kind is str and isinstance(v, str))
        or (kind is float and isinstance(v, (int, float)))
        or (kind is int and isinstance(v, int)))
    if not ok:
        raise ConfigError(f"[{where}] field '{key}' must be {kind.__name__}, got {v!r}")
    return kind(v)


def _matrix(v, where, key):
    try:
        m = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"[{where}] field '{key}' must be a list of numeric rows") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"[{where}] field '{key}' must be square, got shape {m.shape}")
    return m


def parse_chain(table: dict, where: str = "chain") -> Chain:
    keys = [k for k in ("preset", "Q", "rates") if k in table]
    if len(keys) != 1:
        raise ConfigError(f"[{where}] needs exactly one of 'preset', 'Q' or 'rates'")
    label = table.get("label", "")
    try:
        if keys[0] == "preset":
            name = _get(table, "preset", where, str)
            if name not in PRESETS:
                raise ConfigError(f"[{where}] unknown preset {name!r}; choose from {', '.join(PRESETS)}")
            return preset(name)
        if keys[0] == "Q":
            return build_chain(_matrix(table["Q"], where, "Q"), label)
        return chain_from_rates(_matrix(table["rates"], where, "rates"), label)
    except ChainError as exc:
        raise ConfigError(f"[{where}] invalid chain: {exc}") from None


def parse_estimator(table: dict, chain: Chain, where: str = "estimator"):
    """Estimator spec; ``lam`` defaults to ``1/tau*`` and ``tau`` to ``tau*``."""
    kind = _get(table, "kind", where, str, "me").lower()
    if kind not in ESTIMATORS:
        raise ConfigError(f"[{where}] kind must be one of {', '.join(ESTIMATORS)}, got {kind!r}")
    if kind == "me":
        return Martingale()
    horizon = _get(table, "horizon", where, float, None)
    if kind == "pmap" and "thresholds" in table:
        return PMap(_explicit_schedule(table, chain, where))

    def map_():
        if not chain.unique_max and horizon is None:
            hint = "'horizon'" if kind == "pmap" else "'tau' or 'lam'"
            raise ConfigError(f"[{where}] chain has no unique stationary maximum; give {hint}")
        return map_structure(chain, horizon=horizon)

    try:
        if kind == "pmap":
            k = _get(table, "points", where, int, None)
            return PMap(pmap_from_map(chain, map_(), k))
        if kind == "tmap":
            tau = _get(table, "tau", where, float, None)
            return TauMap(map_().global_tau_star if tau is None else tau)
        lam = _get(table, "lam", where, float, None)
        if lam is None:
            lam = 1.0 / map_().global_tau_star
        if kind == "expe":
            return Exponential(lam)
        return Erlang(_get(table, "gamma", where, int), lam)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[{where}] {exc}") from None


def _explicit_schedule(table, chain, where):
    th, vals = table["thresholds"], table.get("values")
    if vals is None:
        raise ConfigError(f"[{where}] 'thresholds' needs matching 'values'")
    if len(th) != chain.size or len(vals) != chain.size:
        raise ConfigError(f"[{where}] need one threshold and value list per state ({chain.size})")
    try:
        ths = tuple(np.concatenate(([0.0], np.asarray(t, dtype=float), [INF])) for t in th)
        vs = tuple(np.concatenate(([i], np.asarray(v, dtype=np.int64))) for i, v in enumerate(vals))
        return PMapSchedule(ths, vs)
    except (InvalidThresholds, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


def parse_policy(table: dict, chain: Chain, where: str = "policy"):
    kind = _get(table, "kind", where, str, None)
    mu = table.get("mu")
    if kind is None:
        kind = "perstate" if isinstance(mu, list) else "fixed"
    kind = kind.lower()
    if kind == "simple":
        kind = "perstate"
    if kind == "fixed":
        m = _get(table, "mu", where, float)
        if not m > 0:
            raise ConfigError(f"[{where}] 'mu' must be positive")
        return Fixed(m)
    if kind not in ("perstate", "ssp"):
        raise ConfigError(f"[{where}] kind must be fixed, perstate or ssp, got {kind!r}")
    if not isinstance(mu, list) or len(mu) != chain.size:
        raise ConfigError(f"[{where}] 'mu' must list {chain.size} rates")
    rates = np.array(mu, dtype=float)
    if np.any(~(rates > 0)):
        raise ConfigError(f"[{where}] all rates in 'mu' must be positive")
    if kind == "perstate":
        return PerState(rates)
    r = _get(table, "r", where, int)
    if not 0 <= r < chain.size:
        raise ConfigError(f"[{where}] 'r' must be a state index in [0, {chain.size})")
    m1, m2 = _get(table, "mu_r1", where), _get(table, "mu_r2", where)
    p = _get(table, "p", where)
    if not (m1 > 0 and m2 > 0):
        raise ConfigError(f"[{where}] 'mu_r1' and 'mu_r2' must be positive")
    if not 0 <= p <= 1:
        raise ConfigError(f"[{where}] 'p' must lie in [0, 1]")
    return SemiSimple(rates, r, m1, m2, p)


def parse_sim(table: dict, chain: Chain, where: str = "sim") -> dict:
    """Keyword arguments for :class:`~ctmcfresh.sim.SimConfig`."""
    if "horizon" in table and "sojourns" in table:
        raise ConfigError(f"[{where}] give 'horizon' or 'sojourns', not both")
    if "horizon" in table:
        horizon = _get(table, "horizon", where)
    else:
        horizon = _get(table, "sojourns", where, float, 1e5) * chain.mean_sojourn
    out = dict(horizon=horizon,
               warmup=_get(table, "warmup", where, float, None),
               seed=_get(table, "seed", where, int, 0),
               replications=_get(table, "replications", where, int, 1),
               batches=_get(table, "batches", where, int, 20))
    if not (math.isfinite(horizon) and horizon > 0):
        raise ConfigError(f"[{where}] horizon must be positive")
    if out["warmup"] is not None and not 0 <= out["warmup"] < horizon:
        raise ConfigError(f"[{where}] warmup must lie in [0, horizon)")
    if out["replications"] < 1:
        raise ConfigError(f"[{where}] replications must be at least 1")
    if out["batches"] < 2:
        raise ConfigError(f"[{where}] batches must be at least 2")
    return out


def format_policy(policy, *, header: dict | None = None) -> str:
    """Serialize a policy as a ``[policy]`` TOML table."""
    lines = ["[policy]"]
    fmt = lambda v: format(float(v), ".17g")
    if isinstance(policy, Fixed):
        lines += ['kind = "fixed"', f"mu = {fmt(policy.mu)}"]
    else:
        mu = ", ".join(fmt(m) for m in np.asarray(policy.mu, dtype=float))
        if isinstance(policy, SemiSimple):
            lines += ['kind = "ssp"', f"mu = [{mu}]", f"r = {int(policy.r)}",
                      f"mu_r1 = {fmt(policy.mu_r1)}", f"mu_r2 = {fmt(policy.mu_r2)}",
                      f"p = {fmt(policy.p)}"]
        else:
            lines += ['kind = "perstate"', f"mu = [{mu}]"]
    for k, v in (header or {}).items():
        lines.append(f'{k} = "{v}"' if isinstance(v, str) else f"{k} = {fmt(v)}")
    return "\n".join(lines) + "\n"
