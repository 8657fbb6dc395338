"""Command-line entry point.

Exit codes: 0 success, 1 bad input or usage, 2 finished but some solver
stage did not converge (outputs are still written and flagged).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import EnumerationCapError, SubsetBudget, certify_uniqueness
from .experiments import (
    LAMBDA_SWEEP,
    METHODS,
    ExperimentPlan,
    emit_csv,
    emit_summary,
    run_plan,
)
from .inversion import (
    DRIVER_SOLVER,
    GDConfig,
    Observation,
    RecoveryError,
    gradient_descent_invert,
    latent_pursuit,
    layered_basis_pursuit,
    oracle_bounds,
    oracle_end_to_end,
    oracle_layered,
)
from .model import (
    ACTIVATION_KINDS,
    ActivationSpec,
    NetworkFormatError,
    forward,
    load_network,
    make_rng,
    random_network,
    read_indices,
    read_vector,
    save_network,
)

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _grid(text: str) -> list:
    """``a:b:step`` (inclusive) or a comma list."""
    if ":" in text:
        parts = _int_list(text.replace(":", ","))
        if len(parts) != 3 or parts[2] <= 0:
            raise argparse.ArgumentTypeError("range grid must be start:stop:step")
        return list(range(parts[0], parts[1] + 1, parts[2]))
    return _int_list(text)


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    return cfg


def _require_new(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_random(args) -> int:
    out = Path(args.out)
    _require_new(out, args.force)
    net = random_network(args.dims, ActivationSpec(args.activation), make_rng(args.seed))
    save_network(net, out)
    print(json.dumps({"config": _config(args), "manifest": str(out / "manifest.json")}, sort_keys=True))
    return EXIT_OK


def _latent(args, net):
    if args.latent:
        return read_vector(args.latent)
    return make_rng(args.seed).standard_normal(net.latent_dim)


def cmd_certify(args) -> int:
    net = load_network(args.weights)
    trace = forward(net, _latent(args, net))
    budget = SubsetBudget(args.policy, args.samples, args.cap, args.seed)
    cert = certify_uniqueness(net, trace, args.policy, budget)
    print(cert.table())
    if args.out:
        _write_json(args.out, {"config": _config(args), "cardinalities": trace.cardinalities,
                               "certificate": cert.to_dict()})
    return EXIT_OK


def _observation(args, n: int) -> Observation:
    y = read_vector(args.observation)
    if y.size != n:
        raise UsageError(f"observation has {y.size} entries, the network outputs {n}")
    mask = read_indices(args.mask) if args.mask else None
    return Observation(y, mask, eps=args.eps or 0.0, sigma=args.sigma)


def cmd_invert(args) -> int:
    net = load_network(args.weights)
    obs = _observation(args, net.output_dim)
    solver = DRIVER_SOLVER if args.max_iters is None else replace(DRIVER_SOLVER, max_iters=args.max_iters)
    if args.method == "layered-bp":
        lams = None if args.lam is None else [args.lam] * net.n_layers
        res = layered_basis_pursuit(net, obs, lambdas=lams, cfg=solver, do_debias=args.debias)
    elif args.method == "latent-pursuit":
        lams = None if args.lam is None else [args.lam] * net.n_layers
        res = latent_pursuit(net, obs, lambdas=lams, rho=args.rho, gamma=args.gamma,
                             cfg=solver, do_debias=args.debias)
    elif args.method == "gd":
        gd = GDConfig(protocol=args.gd_protocol)
        if args.max_iters is not None:
            gd = replace(gd, max_iters=args.max_iters)
        res = gradient_descent_invert(net, obs, gd, seed=args.seed, do_debias=args.debias)
    else:
        if not args.latent:
            raise UsageError("--method oracle needs --latent to read the true supports")
        res = oracle_end_to_end(net, obs, forward(net, read_vector(args.latent)))
    if args.latent:
        res.attach_truth(forward(net, read_vector(args.latent)))
    payload = {"config": _config(args), "result": res.to_dict()}
    _write_json(args.out, payload)
    if res.metrics:
        print(f"z rel_err {res.metrics['z']['rel_err']:.3e}   image snr {res.metrics['image']['snr_db']:.2f} dB")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    net = load_network(args.weights)
    obs = _observation(args, net.output_dim)
    trace = forward(net, read_vector(args.latent))
    e2e = oracle_end_to_end(net, obs, trace).attach_truth(trace)
    lay = oracle_layered(net, obs, trace).attach_truth(trace)
    payload = {"config": _config(args), "end_to_end": e2e.to_dict(), "layered": lay.to_dict()}
    if args.sigma:
        payload["bounds"] = oracle_bounds(net, trace, args.sigma, obs.mask).to_dict()
    _write_json(args.out, payload)
    return EXIT_OK if e2e.converged else EXIT_NOT_CONVERGED


def _plan_from_args(args, kind: str) -> ExperimentPlan:
    if args.plan:
        plan = ExperimentPlan.load(args.plan)
    else:
        common = dict(trials=args.trials, methods=args.methods, seed=args.seed, sigma=args.sigma,
                      timing=args.timing,
                      lambda_sweep=None if args.lambda_sweep == [] else args.lambda_sweep,
                      gd={"protocol": args.gd_protocol})
        if kind == "phase":
            if args.full_scale:
                plan = ExperimentPlan(kind="phase", dims=[args.n0 or 100, 50, args.n or 625],
                                      sweep_values=args.grid or list(range(50, 1001, 50)),
                                      **{**common, "trials": args.trials or 512})
            else:
                plan = ExperimentPlan(kind="phase", dims=[args.n0 or 8, 16, args.n or 196],
                                      sweep_values=args.grid or list(range(16, 161, 8)),
                                      **{**common, "trials": args.trials or 64})
        else:
            mask_kind = args.mask_kind.replace("-", "_")
            amounts = args.amount or ([0.45] if mask_kind == "random" else [13])
            if mask_kind == "top_rows":
                amounts = [int(a) for a in amounts]
            plan = ExperimentPlan(kind="inpaint", weights=str(args.weights) if args.weights else None,
                                  dims=args.dims or [8, 32, 96, 196], mask_kind=mask_kind,
                                  sweep_var="concealed" if mask_kind == "random" else "top_rows",
                                  sweep_values=amounts, image_height=args.image_height,
                                  **{**common, "trials": args.trials or 64})
    return plan


def _run_experiment(args, kind: str) -> int:
    plan = _plan_from_args(args, kind)
    if plan.kind != kind:
        raise UsageError(f"plan file describes a {plan.kind!r} experiment")
    records = run_plan(plan, jobs=args.jobs)
    emit_csv(records, args.out)
    if args.summary:
        emit_summary(records, args.summary)
    print(json.dumps({"config": _config(args), "plan": plan.to_dict(), "records": len(records)},
                     sort_keys=True))
    return EXIT_OK if all(r.converged for r in records) else EXIT_NOT_CONVERGED


def cmd_phase(args) -> int:
    return _run_experiment(args, "phase")


def cmd_inpaint(args) -> int:
    return _run_experiment(args, "inpaint")


# ---------------------------------------------------------------------------
# parser


def _add_obs_flags(p):
    p.add_argument("--weights", required=True, help="weight manifest directory")
    p.add_argument("--observation", required=True, help="observed signal, one value per line")
    p.add_argument("--mask", help="observed coordinate indices, one per line")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--sigma", type=float, help="Gaussian noise level")
    noise.add_argument("--eps", type=float, help="bound on the noise norm")
    p.add_argument("--latent", help="true latent vector, for supports and error metrics")
    p.add_argument("--out", required=True, help="result file (JSON)")


def _add_experiment_flags(p):
    p.add_argument("--plan", help="plan file (JSON); overrides the flags below")
    p.add_argument("--trials", type=int)
    p.add_argument("--methods", type=lambda s: s.split(","), default=["gd", "layered-bp", "latent-pursuit"],
                   help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--lambda-sweep", type=_float_list, default=list(LAMBDA_SWEEP),
                   help="layered-bp candidate lambdas; empty string for the noise-derived schedule")
    p.add_argument("--gd-protocol", choices=["sweep", "momentum"], default="sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.add_argument("--out", required=True, help="per-trial CSV")
    p.add_argument("--summary", help="quantile summary CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geninvert", description="Invert ReLU generative networks.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-random", help="write a Gaussian weight manifest")
    p.add_argument("--dims", type=_int_list, required=True, help="n0,n1,...,n")
    p.add_argument("--activation", choices=ACTIVATION_KINDS, default="tanh")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_random)

    p = sub.add_parser("certify", help="check the uniqueness conditions for a latent vector")
    p.add_argument("--weights", required=True)
    p.add_argument("--latent", help="latent vector file (default: drawn from --seed)")
    p.add_argument("--policy", choices=["exact", "sampled", "generic"], default="generic")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--cap", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("invert", help="recover the latent vector from an observation")
    _add_obs_flags(p)
    p.add_argument("--method", choices=["gd", "layered-bp", "latent-pursuit", "oracle"],
                   default="latent-pursuit")
    p.add_argument("--lam", type=float, help="l1 weight for every layer")
    p.add_argument("--rho", type=float, default=1e-2)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--gd-protocol", choices=["sweep", "momentum"], default="sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--debias", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--max-iters", type=int, help="iteration budget per solver stage")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("oracle", help="support-aware least squares and error bounds")
    _add_obs_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("phase", help="phase-transition sweep over a layer width")
    _add_experiment_flags(p)
    p.add_argument("--n0", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--grid", type=_grid, help="n1 values: a:b:step or comma list")
    p.add_argument("--full-scale", action="store_true", help="n=625, n1=50..1000, 512 trials")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("inpaint", help="inversion from partially observed outputs")
    _add_experiment_flags(p)
    p.add_argument("--weights", help="weight manifest (default: seeded random network)")
    p.add_argument("--dims", type=_int_list, help="random network dims when no manifest is given")
    p.add_argument("--mask-kind", choices=["random", "top-rows"], default="random")
    p.add_argument("--amount", type=_float_list, help="concealed fraction(s) or top row count(s)")
    p.add_argument("--image-height", type=int)
    p.set_defaults(func=cmd_inpaint)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, NetworkFormatError, EnumerationCapError, RecoveryError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"geninvert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
