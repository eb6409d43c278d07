"""Command-line front end.

Exit codes: 0 verified/holds, 1 falsified, 2 unknown, 3 analysis cap exceeded,
64 usage or input error. Reports are JSON on stdout (or ``--out``); a short
human summary goes to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import check_with_bounds, crown_propagate, interval_propagate, zonotope_propagate
from .complete import (
    Budget,
    MilpExportError,
    PatternCapExceeded,
    Status,
    export_milp,
    msr_bounds,
    verify_complete,
)
from .explain import DEFAULT_IG_STEPS, ExplanationError, integrated_gradients, ore_greedy
from .geometry import EXACT_2D, MonteCarlo, mc_confidence_margin
from .model import ModelError, Network, forward, load_network
from .property import SpecError, load_problem
from .preimage import (
    PreimageCapExceeded,
    export_preimage,
    preimage_exact,
    preimage_under_approx,
)

EXIT_VERIFIED = 0
EXIT_FALSIFIED = 1
EXIT_UNKNOWN = 2
EXIT_CAP = 3
EXIT_USAGE = 64
THREADS_ENV = "NNCERT_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with "unknown"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _vector(tokens) -> np.ndarray:
    parts = [p for t in tokens for p in str(t).split(",") if p.strip()]
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise UsageError(f"cannot parse vector {' '.join(map(str, tokens))!r}") from None


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load(args) -> tuple[Network, bytes]:
    data = _read(args.model)
    try:
        return load_network(data), data
    except ModelError as exc:
        where = f" (layer {exc.layer})" if exc.layer is not None else ""
        raise UsageError(f"model error{where}: {exc}") from None


def _problem(args, net: Network):
    raw = _read(args.spec)
    try:
        problem = load_problem(raw, net.output_dim)
    except SpecError as exc:
        raise UsageError(f"spec error: {exc}") from None
    if problem.box.dim != net.input_dim:
        raise UsageError(f"dimension error: spec box has {problem.box.dim} inputs, model expects {net.input_dim}")
    return problem, hashlib.sha256(raw).hexdigest()


def _report(args, command: str, body: dict, started: float) -> dict:
    report = {
        "command": command,
        "tool_version": __version__,
        "model": args.model,
        **body,
        "timing": {"seconds": time.perf_counter() - started},
    }
    return report


def _emit(args, report: dict) -> None:
    text = json.dumps(report, indent=2, default=_json_default) + "\n"
    if getattr(args, "out", None):
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj)}")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- commands


def cmd_verify(args) -> int:
    started = time.perf_counter()
    net, _ = _load(args)
    problem, digest = _problem(args, net)
    box, post = problem.box, problem.post
    body = {
        "spec": args.spec,
        "spec_digest": digest,
        "method": args.method,
        "alpha": args.alpha,
        "seed": args.seed,
        "budget": {"max_nodes": args.max_nodes, "timeout": args.timeout},
    }
    if args.method == "interval":
        _, (lo, hi) = interval_propagate(net, box)
    elif args.method == "zonotope":
        _, (lo, hi), _ = zonotope_propagate(net, box)
    else:
        _, _, (lo, hi) = crown_propagate(net, box, args.alpha)
    body["bounds"] = {"output_lower": lo, "output_upper": hi}
    if args.method == "complete":
        v = verify_complete(net, box, post, Budget(args.max_nodes, args.timeout), args.alpha, seed=args.seed)
        body["status"] = v.status.value
        body["stats"] = {"nodes": v.nodes, "splits": v.splits, "bound": v.bound}
        if v.witness is not None:
            y = forward(net, v.witness)
            body["witness"] = {"x": v.witness, "y": y, "violation": post.A @ y - post.b}
        code = {Status.VERIFIED: EXIT_VERIFIED, Status.FALSIFIED: EXIT_FALSIFIED}.get(v.status, EXIT_UNKNOWN)
    else:
        chk = check_with_bounds(net, box, post, "crown" if args.method == "crown" else args.method, args.alpha)
        body["status"] = chk.status
        body["bounds"].update(row_upper=chk.row_bounds, margins=chk.margins)
        code = EXIT_VERIFIED if chk.verified else EXIT_UNKNOWN
    _emit(args, _report(args, "verify", body, started))
    _say(f"verify[{args.method}]: {body['status']}")
    return code


def cmd_preimage(args) -> int:
    started = time.perf_counter()
    net, _ = _load(args)
    problem, digest = _problem(args, net)
    box, post = problem.box, problem.post
    p = problem.proportion
    body = {
        "spec": args.spec,
        "spec_digest": digest,
        "mode": args.mode,
        "seed": args.seed,
        "proportion": p,
        "budget": {"max_iters": args.max_iters, "cap": args.cap, "samples": args.samples},
    }
    exact2d = box.dim == 2
    if args.mode == "exact":
        try:
            pre = preimage_exact(net, box, post, cap=args.cap)
        except PreimageCapExceeded as exc:
            _say(f"preimage: pattern cap exceeded: {exc}")
            return EXIT_CAP
        export = json.loads(export_preimage(pre, box if not exact2d else None))
        if exact2d:
            vol = pre.volume(EXACT_2D, box)
            margin = 0.0
            estimator = "exact2d"
        else:
            mc = MonteCarlo(args.samples, args.seed, args.threads)
            vol = pre.volume(mc, box)
            margin = mc_confidence_margin(vol / box.volume(), args.samples)
            estimator = "montecarlo"
        coverage = vol / box.volume()
        export["coverage"] = coverage
        body.update(export)
        body["estimator"] = estimator
        body["confidence_margin"] = margin
        if p is None:
            code = EXIT_VERIFIED
            body["status"] = "computed"
        elif coverage - margin >= p:
            code, body["status"] = EXIT_VERIFIED, "holds"
        elif coverage + margin < p:
            code, body["status"] = EXIT_FALSIFIED, "violated"
        else:
            code, body["status"] = EXIT_UNKNOWN, "unknown"
    else:
        target = args.target_coverage if args.target_coverage is not None else (p if p else 1.0)
        if not 0.0 < target <= 1.0:
            raise UsageError("--target-coverage must lie in (0, 1]")
        approx = preimage_under_approx(
            net, box, post, target, args.max_iters, args.alpha, args.alpha_opt, args.seed, args.samples, args.threads
        )
        body.update(approx.to_dict())
        body["history"] = approx.history
        body["splits"] = [{"dim": d, "at": at} for d, at in approx.splits]
        margin = mc_confidence_margin(approx.coverage, args.samples) if approx.estimator == "montecarlo" else 0.0
        body["confidence_margin"] = margin
        if p is None:
            code, body["status"] = EXIT_VERIFIED, "computed"
        elif p == 0.0 or approx.coverage - margin >= p:
            code, body["status"] = EXIT_VERIFIED, "holds"
        else:
            code, body["status"] = EXIT_UNKNOWN, "unknown"
    _emit(args, _report(args, "preimage", body, started))
    _say(f"preimage[{args.mode}]: {len(body['polytopes'])} polytopes, coverage {body['coverage']}, {body['status']}")
    return code


def cmd_explain(args) -> int:
    started = time.perf_counter()
    net, _ = _load(args)
    x = _vector(args.input)
    if x.shape != (net.input_dim,):
        raise UsageError(f"dimension error: input has {x.size} values, model expects {net.input_dim}")
    if not 0 <= args.label < net.output_dim:
        raise UsageError(f"label {args.label} out of range for {net.output_dim} outputs")
    if args.epsilon < 0:
        raise UsageError("--epsilon must be non-negative")
    if args.ig_steps < 1:
        raise UsageError("--ig-steps must be at least 1")
    baseline = _vector(args.baseline) if args.baseline else None
    try:
        ig = integrated_gradients(net, x, baseline, args.label, args.ig_steps)
        exp = ore_greedy(net, x, args.epsilon, args.label, ig, args.margin, Budget(args.max_nodes, args.timeout))
    except ExplanationError as exc:
        raise UsageError(str(exc)) from None
    body = {
        **exp.to_dict(),
        "input": x,
        "label": args.label,
        "ig_steps": args.ig_steps,
        "margin": args.margin,
        "budget": {"max_nodes": args.max_nodes, "timeout": args.timeout},
    }
    _emit(args, _report(args, "explain", body, started))
    _say(f"explain: fixed {list(exp.fixed_features)} (cost {exp.cost}), verified={exp.verified}")
    return EXIT_VERIFIED if exp.verified else EXIT_UNKNOWN


def cmd_msr(args) -> int:
    started = time.perf_counter()
    net, _ = _load(args)
    x = _vector(args.input)
    if x.shape != (net.input_dim,):
        raise UsageError(f"dimension error: input has {x.size} values, model expects {net.input_dim}")
    if not 0 <= args.label < net.output_dim:
        raise UsageError(f"label {args.label} out of range for {net.output_dim} outputs")
    if not (args.cap > 0 and args.tol > 0):
        raise UsageError("--cap and --tol must be positive")
    res = msr_bounds(net, x, args.label, args.cap, args.tol, args.margin, Budget(args.max_nodes, args.timeout))
    body = {
        "input": x,
        "label": args.label,
        "cap": args.cap,
        "tol": args.tol,
        "margin": args.margin,
        "lower": res.lower,
        "upper": res.upper,
        "probes": [{"epsilon": e, "status": s} for e, s in res.probes],
        "inconclusive": res.inconclusive,
        "witness": res.witness,
        "budget": {"max_nodes": args.max_nodes, "timeout": args.timeout},
    }
    _emit(args, _report(args, "msr", body, started))
    _say(f"msr: [{res.lower}, {res.upper}]")
    return EXIT_UNKNOWN if res.inconclusive else EXIT_VERIFIED


def cmd_export_milp(args) -> int:
    net, _ = _load(args)
    problem, _ = _problem(args, net)
    if args.bounds == "interval":
        bounds, _ = interval_propagate(net, problem.box)
    else:
        bounds = None  # CROWN, computed inside
    try:
        text = export_milp(net, problem.box, problem.post, bounds, args.margin)
    except MilpExportError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {args.out}: {exc.strerror}") from None
    else:
        sys.stdout.write(text)
    _say(f"export-milp: {text.count(chr(10))} lines")
    return EXIT_VERIFIED


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nncert", description="Certification toolkit for ReLU networks.")
    parser.add_argument("--version", action="version", version=f"nncert {__version__}")
    parser.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def budget(p):
        p.add_argument("--max-nodes", type=int, default=20_000)
        p.add_argument("--timeout", type=float, default=None, help="seconds")

    v = sub.add_parser("verify", help="check a property over an input box")
    v.add_argument("model")
    v.add_argument("spec")
    v.add_argument("--method", choices=["interval", "zonotope", "crown", "complete"], default="complete")
    v.add_argument("--alpha", choices=["zero", "adaptive"], default="zero")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    budget(v)
    v.set_defaults(func=cmd_verify)

    p = sub.add_parser("preimage", help="exact or under-approximate preimage")
    p.add_argument("model")
    p.add_argument("spec")
    p.add_argument("--mode", choices=["exact", "approx"], default="exact")
    p.add_argument("--target-coverage", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--alpha", choices=["zero", "adaptive"], default="adaptive")
    p.add_argument("--alpha-opt", action="store_true")
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples for non-2-D inputs")
    p.add_argument("--cap", type=int, default=4096, help="maximum live polytopes in exact mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_preimage)

    e = sub.add_parser("explain", help="integrated gradients and a robust explanation")
    e.add_argument("model")
    e.add_argument("--input", nargs="+", required=True)
    e.add_argument("--epsilon", type=float, required=True)
    e.add_argument("--label", type=int, required=True)
    e.add_argument("--ig-steps", type=int, default=DEFAULT_IG_STEPS)
    e.add_argument("--baseline", nargs="+")
    e.add_argument("--margin", type=float, default=0.0)
    e.add_argument("--out")
    budget(e)
    e.set_defaults(func=cmd_explain)

    m = sub.add_parser("msr", help="bracket the maximal safe radius")
    m.add_argument("model")
    m.add_argument("--input", nargs="+", required=True)
    m.add_argument("--label", type=int, required=True)
    m.add_argument("--cap", type=float, required=True)
    m.add_argument("--tol", type=float, default=1e-3)
    m.add_argument("--margin", type=float, default=1e-9)
    m.add_argument("--out")
    budget(m)
    m.set_defaults(func=cmd_msr)

    x = sub.add_parser("export-milp", help="write the MILP encoding in LP format")
    x.add_argument("model")
    x.add_argument("spec")
    x.add_argument("--bounds", choices=["crown", "interval"], default="crown")
    x.add_argument("--margin", type=float, default=1e-5, help="strictness offset of the negated postcondition")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export_milp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads is None:
            args.threads = _default_threads()
        elif args.threads < 1:
            raise UsageError("--threads must be positive")
        return args.func(args)
    except UsageError as exc:
        _say(f"nncert: {exc}")
        return EXIT_USAGE
    except PatternCapExceeded as exc:
        _say(f"nncert: pattern cap exceeded: {exc}")
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
