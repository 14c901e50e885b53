"""Command-line interface.

Subcommands::

    iwf check      --scenario FILE [--full-carrier-sets] [--weights W] [--alpha A] [--out JSON]
    iwf solve      --scenario FILE [--algorithm NAME] [...] [--out JSON]
    iwf trace      (--scenario FILE | --params FILE) --algorithm NAME [--algorithm NAME ...] [--out CSV]
    iwf montecarlo --params FILE [--seed N] [--jobs N] [--out CSV]
    iwf project    --input FILE [--out JSON]
    iwf gen        --params FILE [--seed N] [--ratio R] [--trial T] [--out JSON]

Exit codes: 0 success; 1 bad input; 2 for ``check`` when the spectral-radius
condition fails and for ``solve`` when the run does not converge.
Set ``IWF_LOG`` (e.g. ``IWF_LOG=debug``) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import io
from .algorithms import ALGORITHMS, AlgorithmConfig, initial_profile, run
from .analysis import vi_residual
from .conditions import check_all, check_weighted, estimate_usable_carriers
from .errors import IWFError
from .experiments import (
    TopologyParams,
    TraceBundle,
    condition_probability_sweep,
    random_scenario,
    rate_trace_experiment,
)
from .model import Scenario
from .projection import CappedSimplex, project_capped_simplex

log = logging.getLogger("iwf")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NEGATIVE = 2

# Keys of a params file that are not topology parameters.
EXTRA_PARAM_KEYS = ("ratio", "trial", "users", "eps")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _beta(text: str):
    if text in ("auto", "safe"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("beta must be a number, 'auto' or 'safe'") from None


def _emit(text: str, out) -> None:
    if out:
        io.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _load_params(path):
    raw = io.read_json(path)
    if not isinstance(raw, dict):
        raise IWFError("params file must hold a JSON object")
    extra = {k: raw.pop(k) for k in EXTRA_PARAM_KEYS if k in raw}
    return raw, extra


def _topology(args):
    raw, extra = _load_params(args.params)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    return TopologyParams.from_dict(raw), extra


def _config(args, name: str, Q: int) -> AlgorithmConfig:
    alpha = 0.0 if args.alpha is None else args.alpha
    if isinstance(alpha, list):
        if len(alpha) not in (1, Q):
            raise IWFError(f"--alpha needs 1 or {Q} values")
        alpha = tuple(alpha) if len(alpha) > 1 else alpha[0]
    return AlgorithmConfig.from_name(
        name,
        alpha=alpha,
        beta=args.beta,
        tol=args.tol,
        max_iters=args.max_iters,
        record_profiles=False,
    )


def _rate_scale(args) -> float:
    return 1.0 / math.log(2.0) if args.bits else 1.0


def cmd_check(args) -> int:
    s = io.load_scenario(args.scenario)
    alphas = 0.0 if args.alpha is None else np.broadcast_to(args.alpha, (s.num_users,))
    report = check_all(s, full_sets=args.full_carrier_sets, alphas=alphas)
    if args.weights is not None:
        w = np.asarray(args.weights, dtype=float)
        sets = None if args.full_carrier_sets else estimate_usable_carriers(s)
        for i, direction in ((1, "row"), (2, "col")):
            report.records[i] = check_weighted(s, w, direction, carrier_sets=sets,
                                               full_sets=args.full_carrier_sets)
    lines = [f"{'condition':<18} {'satisfied':<10} margin"]
    for r in report.records:
        status = "n/a" if not r.applicable else ("yes" if r.satisfied else "no")
        lines.append(f"{r.name:<18} {status:<10} {r.margin:.6g}")
    print("\n".join(lines))
    if args.out:
        io.write_json(args.out, report.to_dict())
    return EXIT_OK if report["spectral_radius"].satisfied else EXIT_NEGATIVE


def cmd_solve(args) -> int:
    s = io.load_scenario(args.scenario)
    name = args.algorithm[0] if args.algorithm else "seq-iwfa"
    cfg = _config(args, name, s.num_users)
    trace = run(s, None, cfg)
    scale = _rate_scale(args)
    rates = trace.records[-1].rates * scale
    unit = "bits" if args.bits else "nats"
    print(f"algorithm   {name}")
    print(f"status      {trace.status}")
    print(f"iterations  {trace.num_iterations}")
    print(f"residual    {trace.final_residual:.3e}")
    for q, r in enumerate(rates):
        print(f"rate_{q + 1:<6} {r:.10g} {unit}/carrier")
    if args.out:
        io.write_json(args.out, {
            "algorithm": name,
            "status": trace.status,
            "iterations": trace.num_iterations,
            "residual": trace.final_residual,
            "rate_unit": unit,
            "rates": rates,
            "profile": trace.final_profile,
            "analysis": {"vi_residual": vi_residual(s, trace.final_profile)},
        })
    return EXIT_OK if trace.status == "converged" else EXIT_NEGATIVE


def cmd_trace(args) -> int:
    names = args.algorithm or ["seq-iwfa", "sim-iwfa"]
    if bool(args.scenario) == bool(args.params):
        raise IWFError("trace needs exactly one of --scenario or --params")
    if args.params:
        tp, extra = _topology(args)
        ratio = args.ratio if args.ratio is not None else float(extra.get("ratio", 3.0))
        configs = [(n, _config(args, n, tp.num_users)) for n in names]
        bundle = rate_trace_experiment(tp, configs, extra.get("users"), ratio=ratio,
                                       trial=args.trial if args.trial is not None
                                       else int(extra.get("trial", 0)),
                                       eps=float(extra.get("eps", 1e-6)))
    else:
        s = io.load_scenario(args.scenario)
        p0 = initial_profile(s)
        traces = {}
        for n in names:
            traces[n] = run(s, p0, _config(args, n, s.num_users))
        bundle = TraceBundle(s, traces, list(range(s.num_users)), 1e-6)
    _emit(io.format_csv(bundle.header(), bundle.rows(_rate_scale(args))), args.out)
    for n, k in bundle.iterations_to_eps().items():
        log.info("%s reaches residual %g after %s iterations", n, bundle.eps, k)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    tp, _ = _topology(args)
    curve = condition_probability_sweep(tp, jobs=args.jobs)
    _emit(io.format_csv(["ratio", "condition", "probability", "trials", "ci_halfwidth"],
                        curve.rows()), args.out)
    for name in curve.conditions:
        log.info("%s: probability 0.99 first reached at ratio %g", name, curve.threshold(name))
    return EXIT_OK


def cmd_project(args) -> int:
    data = io.read_json(args.input)
    if isinstance(data, list):
        raise IWFError('project input must be {"x0": [...], "caps": [...]}')
    x0 = np.array(data["x0"], dtype=float)
    caps = np.array(data.get("caps", [math.inf] * x0.size), dtype=float)
    res = project_capped_simplex(x0, CappedSimplex(caps, float(data.get("target_mean", 1.0))))
    out = {"allocation": res.allocation, "water_level": res.water_level,
           "at_zero": res.at_zero, "interior": res.interior, "at_cap": res.at_cap}
    _emit(io.dumps(out), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    tp, extra = _topology(args)
    ratio = args.ratio if args.ratio is not None else float(extra.get("ratio", tp.ratios[0]))
    trial = args.trial if args.trial is not None else int(extra.get("trial", 0))
    s: Scenario = random_scenario(tp, ratio, trial=trial)
    _emit(io.dumps(io.scenario_to_dict(s)), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iwf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False, params=False):
        if scenario:
            p.add_argument("--scenario", metavar="FILE", required=not params,
                           help="scenario JSON")
        if params:
            p.add_argument("--params", metavar="FILE", required=not scenario,
                           help="topology parameter JSON")
        p.add_argument("--out", metavar="PATH", help="output file (default: stdout)")

    def algo(p):
        p.add_argument("--algorithm", action="append", choices=sorted(ALGORITHMS),
                       help="algorithm; repeatable for trace")
        p.add_argument("--alpha", type=_floats, help="smoothing factor(s), one or per user")
        p.add_argument("--beta", type=_beta, default="auto",
                       help="gradient step: number, 'auto' or 'safe'")
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--max-iters", type=int, default=None,
                       help="cap on update events (default: 10000 sweeps)")
        p.add_argument("--bits", action="store_true", help="report rates in bits")

    p = sub.add_parser("check", help="evaluate convergence conditions")
    common(p, scenario=True)
    p.add_argument("--full-carrier-sets", action="store_true")
    p.add_argument("--weights", type=_floats)
    p.add_argument("--alpha", type=_floats)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="compute an equilibrium")
    common(p, scenario=True)
    algo(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("trace", help="per-iteration rate traces")
    common(p, scenario=True, params=True)
    algo(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--trial", type=int)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("montecarlo", help="condition probability curves")
    common(p, params=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("project", help="capped-simplex projection of one vector")
    p.add_argument("--input", metavar="FILE", required=True,
                   help='JSON {"x0": [...], "caps": [...], "target_mean": 1}')
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("gen", help="generate a random scenario")
    common(p, params=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--trial", type=int)
    p.set_defaults(func=cmd_gen)
    return parser


def _setup_logging():
    level = os.environ.get("IWF_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IWFError, OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"iwf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
