"""Command-line interface.

Subcommands ``mbf``, ``smdp``, ``multi``, ``simulate`` and ``presets``.
Every subcommand reads an optional TOML scenario (see
:mod:`ctmcfresh.config`); ``--preset`` replaces its ``[chain]`` table.
Output is CSV with 17 significant digits.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from .errors import ConfigError, CtmcFreshError, InfeasibleBounds, NumericalFailure
from .estimators import Erlang, Exponential
from .freshness import mbf
from .multisource import (
    Source, SourceSet, lagrangian_bisection, random_bdc_sources, uniform_allocation,
    weighted_allocation,
)
from .presets import PRESETS, TABLE_PRESETS, preset
from .sim import SimConfig, simulate
from .smdp import default_action_grid, solve_constrained
from .statedep import Fixed, SemiSimple, mbf_statedep, omega, ssp_metrics

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class UsageError(ConfigError):
    pass


def _num(v) -> str:
    return format(float(v), ".17g")


def parse_mu(text: str) -> np.ndarray:
    """``"0.3"``, ``"0.1,0.5,1"`` or an inclusive sweep ``"start:stop:step"``."""
    try:
        if ":" in text:
            a, b, h = (float(x) for x in text.split(":"))
            if not h > 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / h + 1e-9)) + 1
            # snap accumulated round-off so 0.1:1:0.1 yields exactly 0.3
            mus = np.array([float(f"{m:.12g}") for m in a + h * np.arange(n)])
        else:
            mus = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse rate list {text!r}; use a value, a,b,c or start:stop:step") from None
    if mus.size == 0 or np.any(~(mus > 0)):
        raise UsageError(f"sampling rates must be positive, got {text!r}")
    return mus


def _scenario(args) -> dict:
    data = cfg.load(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        data["chain"] = {"preset": args.preset}
    if "chain" not in data:
        raise UsageError("no chain given; pass a config with a [chain] table or --preset")
    return data


def _estimator_table(args, base: dict, kind: str) -> dict:
    t = dict(base)
    t["kind"] = kind
    for key, field in (("lam", "lam"), ("gamma", "gamma"), ("tau", "tau"), ("map_horizon", "horizon")):
        v = getattr(args, key, None)
        if v is not None:
            t[field] = v
    return t


def _estimators(args, data, chain):
    base = data.get("estimator", {})
    kinds = args.estimator.split(",") if args.estimator else [base.get("kind", "me")]
    return [(k.strip().lower(), cfg.parse_estimator(_estimator_table(args, base, k.strip().lower()), chain))
            for k in kinds]


def _writer(args):
    out = open(args.output, "w", newline="") if getattr(args, "output", None) else sys.stdout
    return out, csv.writer(out, lineterminator="\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_mbf(args) -> int:
    data = _scenario(args)
    chain = cfg.parse_chain(data["chain"])
    mu = args.mu if args.mu is not None else data.get("policy", {}).get("mu")
    if mu is None or isinstance(mu, list):
        raise UsageError("give --mu or a scalar [policy] mu")
    mus = parse_mu(str(mu))
    ests = _estimators(args, data, chain)
    sim_kw = cfg.parse_sim(data.get("sim", {}), chain) if args.simulate else None
    if args.simulate:
        for key in ("seed", "replications"):
            if getattr(args, key) is not None:
                sim_kw[key] = getattr(args, key)
    out, w = _writer(args)
    header = ["mu", "estimator", "mbf", "method"]
    if args.simulate:
        header += ["empirical_mbf", "std_error", "z"]
    w.writerow(header)
    for m in mus:
        for name, spec in ests:
            rep = mbf(chain, spec, float(m), "general" if args.general else "auto")
            row = [_num(m), name, _num(rep.value), rep.method]
            if args.simulate:
                r = simulate(SimConfig(chain, spec, Fixed(float(m)), **sim_kw))
                row += [_num(r.empirical_mbf), _num(r.std_error), _num(r.z_score(rep.value))]
            w.writerow(row)
    if out is not sys.stdout:
        out.close()
    return EXIT_OK


def cmd_smdp(args) -> int:
    data = _scenario(args)
    chain = cfg.parse_chain(data["chain"])
    base = data.get("estimator", {})
    kind = (args.estimator or base.get("kind", "me")).lower()
    spec = cfg.parse_estimator(_estimator_table(args, base, kind), chain)
    if isinstance(spec, (Exponential, Erlang)):
        raise UsageError("the SMDP solver needs a deterministic estimator (me, tmap or pmap)")
    if not args.omega > 0:
        raise UsageError("--omega must be positive")
    grid = default_action_grid(args.omega, args.grid_size)
    sol = solve_constrained(chain, spec, args.omega, grid, args.eps1, args.eps2)
    uniform = mbf(chain, spec, args.omega).value
    summary = {"Omega": args.omega, "gamma": sol.gamma, "omega": sol.omega, "mbf": sol.mbf,
               "uniform_mbf": uniform, "policy_type": sol.kind, "estimator": kind}
    text = cfg.format_policy(sol.policy, header={k: v for k, v in summary.items()})
    if args.output:
        Path(args.output).write_text(text)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["Omega", "estimator", "policy_type", "gamma", "omega", "mbf", "uniform_mbf", "rates"])
    w.writerow([_num(args.omega), kind, sol.kind, _num(sol.gamma), _num(sol.omega), _num(sol.mbf),
                _num(uniform), " ".join(_num(r) for r in sol.rates)])
    if isinstance(sol.policy, SemiSimple):
        p = sol.policy
        w.writerow(["ssp_state", "mu_r1", "mu_r2", "p"])
        w.writerow([p.r, _num(p.mu_r1), _num(p.mu_r2), _num(p.p)])
    return EXIT_OK


def _sources(data, args):
    multi = data.get("multi", {})
    if args.random or "random" in multi:
        C = args.random or cfg._get(multi, "random", "multi", int)
        seed = args.seed if args.seed is not None else cfg._get(multi, "seed", "multi", int, 2024)
        return random_bdc_sources(C, seed), multi
    tables = data.get("source")
    if not tables:
        raise UsageError("no sources; add [[source]] tables or use --random C")
    out = []
    for k, t in enumerate(tables):
        where = f"source.{k}"
        chain = cfg.parse_chain({key: t[key] for key in ("preset", "Q", "rates", "label") if key in t}, where)
        est = t.get("estimator", {"kind": "pmap"})
        if isinstance(est, str):
            est = {"kind": est}
        spec = cfg.parse_estimator(est, chain, where + ".estimator")
        out.append(Source(chain, spec, cfg._get(t, "weight", where), t.get("label", chain.label or f"s{k}")))
    w = np.array([s.weight for s in out])
    if abs(w.sum() - 1.0) > 1e-9:
        raise ConfigError(f"source weights must sum to 1, got {w.sum():.12g}")
    return out, multi


def cmd_multi(args) -> int:
    data = cfg.load(args.config) if args.config else {}
    sources, multi = _sources(data, args)
    budgets = parse_mu(args.budget) if args.budget else parse_mu(str(cfg._get(multi, "budget", "multi")))
    out, w = _writer(args)
    w.writerow(["budget", "source", "weight", "rate", "mbf", "uniform_rate", "uniform_mbf",
                "weighted_rate", "weighted_mbf"])
    summaries = []
    for B in budgets:
        ss = SourceSet(sources, float(B), multi.get("rho_l"), multi.get("rho_u"))
        if ss.size * ss.rho_l > ss.Omega:
            raise InfeasibleBounds(f"budget {B} is below C*rho_l = {ss.size * ss.rho_l}")
        opt = lagrangian_bisection(ss, args.eps1, args.eps2)
        uni, wtd = uniform_allocation(ss), weighted_allocation(ss)
        for k, s in enumerate(sources):
            w.writerow([_num(B), s.label, _num(s.weight), _num(opt.rates[k]), _num(opt.per_source[k]),
                        _num(uni.rates[k]), _num(uni.per_source[k]), _num(wtd.rates[k]),
                        _num(wtd.per_source[k])])
        summaries.append((B, opt, uni, wtd))
    w.writerow([])
    w.writerow(["budget", "theta", "F", "J", "branch", "F_uniform", "F_weighted"])
    for B, opt, uni, wtd in summaries:
        w.writerow([_num(B), _num(opt.theta), _num(opt.objective), _num(opt.total), opt.branch,
                    _num(uni.objective), _num(wtd.objective)])
    if out is not sys.stdout:
        out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    data = _scenario(args)
    chain = cfg.parse_chain(data["chain"])
    base = data.get("estimator", {})
    kind = (args.estimator or base.get("kind", "me")).lower()
    spec = cfg.parse_estimator(_estimator_table(args, base, kind), chain)
    pol_table = cfg.load(args.policy).get("policy", {}) if args.policy else data.get("policy")
    if args.mu is not None:
        pol_table = {"kind": "fixed", "mu": args.mu}
    if not pol_table:
        raise UsageError("no sampling policy; give --mu, --policy FILE or a [policy] table")
    policy = cfg.parse_policy(pol_table, chain)
    sim = dict(data.get("sim", {}))
    if args.horizon is not None or args.sojourns is not None:
        sim.pop("horizon", None)
        sim.pop("sojourns", None)
    for key in ("seed", "replications", "horizon", "sojourns"):
        if getattr(args, key) is not None:
            sim[key] = getattr(args, key)
    kw = cfg.parse_sim(sim, chain)
    r = simulate(SimConfig(chain, spec, policy, **kw), trace=bool(args.trace))
    if args.trace:
        Path(args.trace).write_text(r.trace.to_csv())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["estimator", "empirical_mbf", "std_error", "empirical_omega", "omega_std_error",
                "queries", "total_time", "replications", "seed"])
    w.writerow([kind, _num(r.empirical_mbf), _num(r.std_error), _num(r.empirical_omega),
                _num(r.omega_std_error), r.query_count, _num(r.total_time), kw["replications"],
                kw["seed"]])
    if args.validate:
        value, rate = _analytic(chain, spec, policy)
        w.writerow(["quantity", "closed_form", "empirical", "z"])
        w.writerow(["mbf", _num(value), _num(r.empirical_mbf), _num(r.z_score(value))])
        w.writerow(["omega", _num(rate), _num(r.empirical_omega),
                    _num((r.empirical_omega - rate) / r.omega_std_error)])
    return EXIT_OK


def _analytic(chain, spec, policy):
    if isinstance(policy, Fixed):
        return mbf(chain, spec, policy.mu).value, policy.mu
    if isinstance(spec, (Exponential, Erlang)):
        raise UsageError("--validate with state-dependent rates needs a deterministic estimator")
    if isinstance(policy, SemiSimple):
        return ssp_metrics(chain, spec, policy)
    return mbf_statedep(chain, spec, policy), omega(chain, policy.rates(chain.size))


def cmd_presets(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["name", "states", "reversible", "i_star", "unique_max", "table"])
    for name in PRESETS:
        c = preset(name)
        w.writerow([name, c.size, c.reversible, c.i_star, c.unique_max, name in TABLE_PRESETS])
    return EXIT_OK


# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctmcfresh", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, estimator_help="estimator: me, expe, erle, tmap or pmap"):
        sp.add_argument("config", nargs="?", help="TOML scenario file")
        sp.add_argument("--preset", help=f"bundled chain ({', '.join(PRESETS)})")
        sp.add_argument("--estimator", "--estimators", dest="estimator", help=estimator_help)
        sp.add_argument("--lam", type=float, help="EXPE/ERLE clock rate (default 1/tau*)")
        sp.add_argument("--gamma", type=int, help="ERLE stage count")
        sp.add_argument("--tau", type=float, help="tau-MAP threshold (default tau*)")
        sp.add_argument("--map-horizon", type=float,
                        help="MAP scan horizon (needed without a unique stationary maximum)")

    s = sub.add_parser("mbf", help="closed-form MBF over a rate sweep")
    common(s, "comma-separated estimators (me, expe, erle, tmap, pmap)")
    s.add_argument("--mu", help="rate, list a,b,c or sweep start:stop:step")
    s.add_argument("--general", action="store_true", help="force the per-state fresh-time route")
    s.add_argument("--simulate", action="store_true", help="add Monte Carlo columns")
    s.add_argument("--seed", type=int)
    s.add_argument("--replications", type=int)
    s.add_argument("-o", "--output", help="CSV file (default stdout)")
    s.set_defaults(func=cmd_mbf)

    s = sub.add_parser("smdp", help="optimal state-dependent rates under a budget")
    common(s, "me, tmap or pmap")
    s.add_argument("--omega", type=float, required=True, help="average rate budget")
    s.add_argument("--eps1", type=float, default=1e-5)
    s.add_argument("--eps2", type=float, default=1e-3)
    s.add_argument("--grid-size", type=int, default=200, help="number of log-spaced actions")
    s.add_argument("-o", "--output", help="write the policy as a TOML [policy] table")
    s.set_defaults(func=cmd_smdp)

    s = sub.add_parser("multi", help="split a budget across several chains")
    s.add_argument("config", nargs="?", help="TOML file with [multi] and [[source]] tables")
    s.add_argument("--budget", help="budget, list or sweep start:stop:step")
    s.add_argument("--random", type=int, help="use C random birth-death sources")
    s.add_argument("--seed", type=int, help="seed for --random (default 2024)")
    s.add_argument("--eps1", type=float, default=1e-5)
    s.add_argument("--eps2", type=float, default=1e-3)
    s.add_argument("-o", "--output", help="CSV file (default stdout)")
    s.set_defaults(func=cmd_multi)

    s = sub.add_parser("simulate", help="Monte Carlo estimate of the MBF")
    common(s)
    s.add_argument("--mu", type=float, help="fixed sampling rate (overrides [policy])")
    s.add_argument("--policy", help="policy file written by 'smdp -o'")
    s.add_argument("--seed", type=int)
    s.add_argument("--replications", type=int)
    s.add_argument("--horizon", type=float, help="horizon in time units")
    s.add_argument("--sojourns", type=float, help="horizon in mean sojourn times")
    s.add_argument("--validate", action="store_true", help="compare with the closed form")
    s.add_argument("--trace", help="write the event trace of replication 0 as CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("presets", help="list bundled chains")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InfeasibleBounds) as exc:
        print(f"ctmcfresh: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"ctmcfresh: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CtmcFreshError as exc:
        print(f"ctmcfresh: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"ctmcfresh: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
