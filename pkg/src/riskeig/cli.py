"""Command-line interface: ``riskeig <command> <model.json> [options]``.

Exit codes: 0 success, 1 model validation failure, 2 solver
non-convergence, 3 usage error.  The report goes to standard output as
JSON; with ``--out DIR`` the report, a CSV table and a manifest (written
last) are stored in ``DIR``.

CSV tables:
  rungs.csv          n, rho_n, iterations, cw_gap
  iters.csv          k, lambda, max_theta, policy_changes
  policies.csv       policy, value, irreducible
  discrepancies.csv  quantity, value, reference, abs_diff
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .errors import (DegenerateEigenvector, DimensionMismatch, InvalidParams, InvalidPolicy,
                     LeakyKernel, MalformedModel, NoConvergence, ReferenceUnreachable,
                     TooManyPolicies, ZeroPsi)
from .ladder import LadderConfig, default_rungs, solve_ladder
from .model import Policy, check_lyapunov, check_reachability, load_model_with_cert, validate_model
from .montecarlo import SimConfig, simulate
from .oracle import DEFAULT_CAP, brute_force_lambda_star, count_policies
from .pia import PiaConfig, run_pia

log = logging.getLogger("riskeig")

EXIT_OK, EXIT_INVALID, EXIT_NOCONV, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationFailed(Exception):
    def __init__(self, report):
        super().__init__("model failed validation")
        self.report = report


def _version():
    try:
        return metadata.version("riskeig")
    except metadata.PackageNotFoundError:
        return "unknown"


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("RISKEIG_THREADS")
    try:
        return int(env) if env else 1
    except ValueError:
        raise UsageError(f"RISKEIG_THREADS must be an integer, got {env!r}") from None


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _load(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such model file: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None
    model, cert = load_model_with_cert(obj)
    source = obj.get("parametric", str(p))
    return model, cert, source


def _checked(path):
    model, cert, source = _load(path)
    report = validate_model(model)
    if not report.passed:
        raise ValidationFailed(report)
    return model, cert, source


def _load_policy(path, model):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such policy file: {path}")
    obj = json.loads(p.read_text())
    try:
        policy = Policy(obj["action_index"])
    except (KeyError, TypeError):
        raise UsageError('policy file must look like {"action_index": [...]}') from None
    policy.validate(model)
    return policy


def _parse_rungs(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--rungs expects comma-separated integers, got {text!r}") from None


class Output:
    """Collects the files of one run and writes the manifest last."""

    def __init__(self, args, command, source, config):
        self.dir = Path(args.out) if args.out else None
        self.files = []
        self.manifest = {"command": command, "model_source": source, "config": config,
                         "timestamp": _timestamp(), "version": _version()}
        if self.dir is not None:
            if (self.dir / "manifest.json").exists() and not args.force:
                raise UsageError(f"{self.dir} already holds outputs; pass --force to overwrite")
            self.dir.mkdir(parents=True, exist_ok=True)

    def json(self, name, obj):
        if self.dir is not None:
            self.files.append(str(io.write_json(self.dir / name, obj)))

    def csv(self, name, header, rows):
        if self.dir is not None:
            self.files.append(str(io.write_csv(self.dir / name, header, rows)))

    def figure(self, name, fn, *a):
        if self.dir is not None:
            self.files.append(str(fn(*a, self.dir / name)))

    def close(self):
        if self.dir is not None:
            self.manifest["outputs"] = self.files
            io.write_json(self.dir / "manifest.json", self.manifest)


def _emit(obj):
    sys.stdout.write(io.dumps(obj))


# --- commands ----------------------------------------------------------------

def cmd_validate(args):
    model, cert, source = _load(args.model)
    report = validate_model(model)
    out = {"kind": model.kind, "states": model.size, "closed": model.closed,
           "leaks": model.leaks(), "validation": report.to_dict(),
           "path_condition": check_reachability(model, "path_condition").to_dict()}
    if cert is not None:
        out["lyapunov"] = check_lyapunov(model, cert).to_dict()
    o = Output(args, "validate", source, {})
    o.json("report.json", out)
    o.close()
    _emit(out)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_solve(args):
    model, cert, source = _checked(args.model)
    if args.rungs and args.auto:
        raise UsageError("--rungs and --auto are exclusive")
    rungs = _parse_rungs(args.rungs) if args.rungs else default_rungs(model.size)
    mode = args.mode.replace("-", "_")
    try:
        config = LadderConfig(rung_sizes=rungs, tol=args.tol, tol_rho=args.tol_rho, mode=mode,
                              cert=cert)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    o = Output(args, "solve", source, {"rungs": rungs, "tol": args.tol, "tol_rho": args.tol_rho,
                                       "mode": args.mode})
    try:
        report = solve_ladder(model, config)
    except NoConvergence as exc:
        if exc.report is not None:
            _write_solve(o, exc.report, args)
            o.close()
            _emit(exc.report.to_dict())
        raise
    _write_solve(o, report, args)
    o.close()
    _emit(report.to_dict())
    return EXIT_OK


def _write_solve(o, report, args):
    o.json("report.json", report.to_dict())
    o.csv("rungs.csv", ["n", "rho_n", "iterations", "cw_gap"], report.csv_rows())
    if args.plot:
        from .plotting import plot_rungs

        o.figure("rungs.png", plot_rungs, report)


def cmd_pia(args):
    model, _, source = _checked(args.model)
    init = None if args.init == "uniform" else _load_policy(args.init, model)
    if args.truncation is not None and not 1 <= args.truncation <= model.size:
        raise UsageError(f"--truncation must lie in 1..{model.size}")
    config = PiaConfig(init_policy=init, truncation=args.truncation)
    o = Output(args, "pia", source, {"init": args.init, "truncation": args.truncation})
    trace = run_pia(model, config)
    o.json("report.json", trace.to_dict())
    o.csv("iters.csv", ["k", "lambda", "max_theta", "policy_changes"], trace.csv_rows())
    if args.plot:
        from .plotting import plot_iterates

        o.figure("iters.png", plot_iterates, trace)
    o.close()
    _emit(trace.to_dict())
    return EXIT_OK


def cmd_oracle(args):
    model, _, source = _load(args.model)
    o = Output(args, "oracle", source, {"cap": args.cap})
    result = brute_force_lambda_star(model, cap=args.cap, threads=_threads(args))
    o.json("report.json", result.to_dict())
    o.csv("policies.csv", ["policy", "value", "irreducible"], result.csv_rows())
    o.close()
    _emit(result.to_dict())
    return EXIT_OK


def cmd_simulate(args):
    model, _, source = _checked(args.model)
    policy = _load_policy(args.policy, model)
    start = model.reference_state if args.start is None else args.start
    try:
        config = SimConfig(args.horizon, args.paths, args.seed, start, args.batches)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    o = Output(args, "simulate", source, {"horizon": args.horizon, "paths": args.paths,
                                          "seed": args.seed, "start_state": start,
                                          "batch_count": args.batches})
    est = simulate(model, policy, config)
    o.json("report.json", est.to_dict())
    o.close()
    _emit(est.to_dict())
    return EXIT_OK


def cmd_compare(args):
    model, cert, source = _checked(args.model)
    o = Output(args, "compare", source, {"tol": args.tol, "cap": args.cap,
                                         "horizon": args.horizon, "paths": args.paths,
                                         "seed": args.seed})
    ladder = solve_ladder(model, LadderConfig(tol=args.tol, cert=cert))
    trace = run_pia(model, PiaConfig(truncation=ladder.final.domain))
    rows = [("pia_vs_ladder", trace.final_lambda, ladder.lambda_star)]
    out = {"ladder": ladder.to_dict(), "pia": trace.to_dict(), "notes": []}
    if count_policies(model) <= args.cap:
        oracle = brute_force_lambda_star(model, cap=args.cap, threads=_threads(args))
        out["oracle"] = oracle.to_dict()
        rows += [("ladder_vs_oracle", ladder.lambda_star, oracle.lambda_star),
                 ("pia_vs_oracle", trace.final_lambda, oracle.lambda_star),
                 ("ladder_policy_vs_oracle", oracle.value_of(ladder.policy), oracle.lambda_star)]
    else:
        out["notes"].append(f"oracle skipped: more than {args.cap} policies")
    if args.paths > 0:
        try:
            est = simulate(model, ladder.policy,
                           SimConfig(args.horizon, args.paths, args.seed, model.reference_state))
            out["simulation"] = est.to_dict()
            rows.append(("simulation_vs_ladder", est.point, ladder.lambda_star))
        except LeakyKernel as exc:
            out["notes"].append(f"simulation skipped: {exc}")
    table = [(name, v, ref, abs(v - ref)) for name, v, ref in rows]
    out["discrepancies"] = [{"quantity": n, "value": v, "reference": r, "abs_diff": d}
                            for n, v, r, d in table]
    o.json("report.json", out)
    o.csv("discrepancies.csv", ["quantity", "value", "reference", "abs_diff"], table)
    o.close()
    _emit(out)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="directory for report.json, CSV tables and manifest.json")
    common.add_argument("--force", action="store_true", help="overwrite outputs in --out")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $RISKEIG_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="riskeig", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a model file")
    p.add_argument("model")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("solve", parents=[common], help="truncation ladder for lambda* and psi*")
    p.add_argument("model")
    p.add_argument("--rungs", help="comma-separated domain sizes, e.g. 16,32,64")
    p.add_argument("--auto", action="store_true", help="rungs 16, 32, ... up to the truncation")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--tol-rho", type=float, default=1e-6)
    p.add_argument("--mode", choices=["stable", "near-monotone"], default="stable")
    p.add_argument("--plot", action="store_true", help="also write rungs.png (needs matplotlib)")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("pia", parents=[common], help="policy iteration")
    p.add_argument("model")
    p.add_argument("--init", default="uniform", help='"uniform" (action 0) or a policy file')
    p.add_argument("--truncation", type=int, default=None)
    p.add_argument("--plot", action="store_true", help="also write iters.png (needs matplotlib)")
    p.set_defaults(fn=cmd_pia)

    p = sub.add_parser("oracle", parents=[common], help="brute force over stationary policies")
    p.add_argument("model")
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate for a policy")
    p.add_argument("model")
    p.add_argument("--policy", required=True)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--start", type=int, default=None)
    p.add_argument("--batches", type=int, default=32)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", parents=[common], help="ladder vs PIA vs oracle vs simulation")
    p.add_argument("model")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--cap", type=int, default=DEFAULT_CAP)
    p.add_argument("--horizon", type=float, default=200)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="riskeig: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except ValidationFailed as exc:
        _emit({"validation": exc.report.to_dict()})
        print(f"riskeig: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (MalformedModel, DimensionMismatch, InvalidParams, LeakyKernel) as exc:
        print(f"riskeig: invalid model: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoConvergence, ReferenceUnreachable, DegenerateEigenvector, ZeroPsi) as exc:
        print(f"riskeig: no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except (UsageError, InvalidPolicy, TooManyPolicies) as exc:
        print(f"riskeig: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
