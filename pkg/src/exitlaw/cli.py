"""Command-line entry point.

Exit codes: 0 success, 1 acceptance failure (``verify``), 2 configuration or
parse error, 3 violated mathematical hypothesis (no or tangential crossing,
wrong drift sign, infeasible rejection sampling).
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import acceptance
from .conditioned1d import deterministic_time, limit_variance, load_oned_problem, simulate_conditioned
from .errors import ConfigError, DomainError, HypothesisError
from .limitlaw import analyze
from .mc import run_ensemble, write_ensemble_csv
from .model import load_problem
from .stats import ks_one_sample, summarize

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    problem: Path = None
    eps: float = None
    n: int = None
    master_seed: int = 0
    h_sde: float = None
    t_cap: float = None
    out: Path = None
    jobs: int = 1

    def __post_init__(self):
        if self.problem is not None and not Path(self.problem).is_file():
            raise ConfigError(f"problem file not found: {self.problem}")
        if self.eps is not None and not self.eps > 0:
            raise ConfigError(f"--eps must be positive, got {self.eps}")
        if self.n is not None and self.n < 1:
            raise ConfigError(f"--n must be at least 1, got {self.n}")
        if self.h_sde is not None and not self.h_sde > 0:
            raise ConfigError(f"--h-sde must be positive, got {self.h_sde}")
        if self.t_cap is not None and not self.t_cap > 0:
            raise ConfigError(f"--t-cap must be positive, got {self.t_cap}")
        if self.jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {self.jobs}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="exitlaw", description="Small-noise exit times and exit points: limit laws and simulation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="deterministic crossing, linearization and limit law")
    a.add_argument("--problem", required=True, type=Path)
    a.add_argument("--h-ode", type=float, default=1e-3)
    a.add_argument("--out", type=Path, help="JSON output file (default: stdout)")

    s = sub.add_parser("simulate", help="Monte Carlo exit ensemble")
    s.add_argument("--problem", required=True, type=Path)
    s.add_argument("--eps", required=True, type=float)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h-sde", type=float, help="default eps^2/10")
    s.add_argument("--t-cap", type=float, help="default 3T")
    s.add_argument("--out", type=Path, required=True, help="CSV file; the summary goes next to it")
    s.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("conditioned", help="1-d diffusion conditioned to exit through a2")
    c.add_argument("--problem", required=True, type=Path)
    c.add_argument("--method", choices=("htransform", "rejection"), default="htransform")
    c.add_argument("--eps", required=True, type=float)
    c.add_argument("--n", type=int, default=1000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--h-sde", type=float, help="default eps^2/10")
    c.add_argument("--out", type=Path, required=True, help="CSV file; the summary goes next to it")
    c.add_argument("--jobs", type=int, default=1)

    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--quick", action="store_true", help=f"n / {acceptance.QUICK_FACTOR}, KS thresholds x2")
    v.add_argument("--only", nargs="*", help="criterion numbers to run")
    v.add_argument("--out", type=Path, help="directory for verify_results.json")
    v.add_argument("--jobs", type=int, default=1)
    return p


def _summary_path(csv_path):
    return csv_path.with_name(csv_path.stem + ".summary.json")


def _write_json(payload, path):
    text = json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2, allow_nan=True)
    if path is None:
        print(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")


def _clean(x):
    """JSON-friendly: NaN becomes None."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def cmd_analyze(args):
    cfg = RunConfig("analyze", problem=args.problem, out=args.out)
    spec = load_problem(cfg.problem)
    result = analyze(spec, h_ode=args.h_ode)
    _write_json(result.to_json(), cfg.out)
    return 0


def cmd_simulate(args):
    cfg = RunConfig("simulate", args.problem, args.eps, args.n, args.seed, args.h_sde, args.t_cap, args.out, args.jobs)
    spec = load_problem(cfg.problem)
    result = analyze(spec)
    ens = run_ensemble(spec, cfg.eps, cfg.n, cfg.master_seed, h_sde=cfg.h_sde, t_cap=cfg.t_cap,
                       jobs=cfg.jobs, analysis=result)
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    write_ensemble_csv(ens, cfg.out)
    law = result.law
    r = ens.rescaled
    payload = {
        "eps": cfg.eps,
        "alpha": law.alpha,
        "n": cfg.n,
        "seed": cfg.master_seed,
        "h_sde": ens.h_sde,
        "t_cap": ens.t_cap,
        "T": result.flow.T,
        "z": result.flow.z.tolist(),
        "counts": ens.counts,
        "limit_law": law.to_json(),
    }
    if r.u.size:
        payload["u"] = summarize(r.u).to_json()
        payload["ks_time"] = ks_one_sample(r.u, law.time_mean, law.time_var)
        payload["ks_point"] = [
            ks_one_sample(r.pim_w[:, i], law.point_mean[i], law.point_cov[i, i]) for i in range(r.pim_w.shape[1])
        ]
    _write_json(payload, _summary_path(cfg.out))
    return 0


def cmd_conditioned(args):
    cfg = RunConfig("conditioned", args.problem, args.eps, args.n, args.seed, args.h_sde, None, args.out, args.jobs)
    prob = load_oned_problem(cfg.problem)
    ens = simulate_conditioned(prob, cfg.eps, cfg.n, cfg.master_seed, h_sde=cfg.h_sde, method=args.method,
                               jobs=cfg.jobs)
    T0 = deterministic_time(prob)
    var0 = limit_variance(prob)
    u = (ens.tau - T0) / cfg.eps
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["path_seed", "tau", "u"])
        for s, t, v in zip(ens.path_seeds, ens.tau, u):
            wr.writerow([str(int(s)), repr(float(t)), repr(float(v))])
    summary = summarize(u) if u.size else None
    payload = {
        "method": args.method,
        "eps": cfg.eps,
        "n": int(u.size),
        "seed": cfg.master_seed,
        "h_sde": ens.h_sde,
        "T0": T0,
        "limit_variance": var0,
        "sample_mean_u": summary.mean if summary else None,
        "sample_var_u": _clean(summary.var) if summary else None,
        "ks_vs_gaussian": ks_one_sample(u, 0.0, var0) if u.size else None,
        "overshoots": ens.overshoots,
        "capped": ens.capped,
    }
    if args.method == "rejection":
        payload["acceptance_rate"] = ens.acceptance_rate
        payload["acceptance_estimate"] = ens.acceptance_estimate
        payload["trials"] = ens.n_trials
    _write_json(payload, _summary_path(cfg.out))
    return 0


def cmd_verify(args):
    RunConfig("verify", out=args.out, jobs=args.jobs)
    unknown = sorted(set(args.only or ()) - set(acceptance.CRITERIA))
    if unknown:
        raise ConfigError(f"unknown criteria {unknown}; choose from {sorted(acceptance.CRITERIA)}")
    results = acceptance.run_all(quick=args.quick, jobs=args.jobs, only=args.only)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (" (quick mode)" if args.quick else ""))
    if args.out is not None:
        rows = [
            {"criterion": r.criterion, "name": r.name, "measured": _clean(r.measured), "threshold": r.threshold,
             "passed": r.passed, "detail": r.detail}
            for r in results
        ]
        _write_json({"quick": args.quick, "results": rows}, args.out / "verify_results.json")
    return 1 if failed else 0


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "conditioned": cmd_conditioned, "verify": cmd_verify}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except HypothesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
