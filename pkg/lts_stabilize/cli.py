import argparse
import json
import logging
import sys

import numpy as np

from lts_stabilize.certify import (
    DEFAULT_EPS,
    DEFAULT_THETA,
    compute_constants,
    d1_gram_lower_bound,
    d2_norm_bound,
    delta_requirement,
    error_report,
    theory_T_bound,
)
from lts_stabilize.csv_generator import CSVGenerator
from lts_stabilize.errors import InvalidConfig, LtsError
from lts_stabilize.experiments import (
    baseline_record,
    full_id_baseline,
    plant_rng,
    run_rng,
    run_sweep,
    summarize,
)
from lts_stabilize.lts0n import run_lts0n
from lts_stabilize.plant import (
    MAX_MODULUS_PRODUCT,
    MIN_UNSTABLE_SPACING,
    load_plant,
    random_plant,
    save_plant,
)
from lts_stabilize.types import NOISE_KINDS, ExperimentConfig, Lts0nConfig, NoiseModel

EXIT_OK = 0
EXIT_DOMAIN = 2
EXIT_RUN = 3
EXIT_USAGE = 64

# flag dest -> Lts0nConfig field
LTS_FLAGS = {
    "T": "T",
    "k_hat": "k_hat",
    "tau": "tau",
    "alpha": "alpha",
    "gamma": "gamma",
    "epsilon": "epsilon",
    "delta": "delta",
    "omega_max": "omega_max",
    "post_horizon": "post_horizon",
    "guard": "guard",
    "seed": "seed",
}


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _add_lts_flags(parser):
    parser.add_argument("--config", help="JSON file with learner settings; flags override it")
    parser.add_argument("--T", type=int, help="Stage-1 horizon")
    parser.add_argument("--k-hat", type=int, help="Assumed instability index (default: the plant's k)")
    parser.add_argument("--tau", type=int, help="Hop length of the controller")
    parser.add_argument("--alpha", type=float, help="Probe gain")
    parser.add_argument("--gamma", type=float, help="Stopping-ratio threshold")
    parser.add_argument("--epsilon", type=float, help="Projector error budget")
    parser.add_argument("--delta", type=float, help="Basis error budget (default: sqrt(2 k_hat)·epsilon)")
    parser.add_argument("--omega-max", type=int, help="Cap on the open-loop wait before each probe")
    parser.add_argument("--post-horizon", type=int, help="Closed-loop steps after learning (default: 10·T)")
    parser.add_argument("--guard", type=float, help="State norm treated as overflow")
    parser.add_argument("--seed", type=int, help="Seed of the run's noise stream")


def _read_json(parser, path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read {path}: {exc}")


def _lts_config(parser, args, plant=None) -> Lts0nConfig:
    data = _read_json(parser, args.config) if args.config else {}
    if plant is not None and plant.k is not None:
        data.setdefault("k_hat", plant.k)
    for dest, name in LTS_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[name] = value
    return Lts0nConfig.from_dict(data)


def _load_plant(parser, path):
    try:
        return load_plant(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        parser.error(f"cannot read plant {path}: {exc}")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=float)


def _parse_x0(parser, text, n):
    if text is None:
        return None
    try:
        x0 = np.array([float(v) for v in text.split(",")])
    except ValueError:
        parser.error(f"--x0 must be a comma-separated list of numbers, got {text!r}")
    if x0.size != n:
        parser.error(f"--x0 has {x0.size} entries but the plant has n={n}")
    return x0


def cmd_gen(parser, args):
    kind = args.noise or ("gaussian" if args.sigma > 0 else "none")
    noise = NoiseModel(kind=kind, sigma=args.sigma, c=args.c)
    print(f"generating plant n={args.n} k={args.k} m={args.m} seed={args.seed}")
    plant = random_plant(args.n, args.k, args.m, tuple(args.unstable_range), tuple(args.stable_range),
                         args.cond_limit, noise, rng=plant_rng(args.seed, args.n), seed=args.seed,
                         unstable_spacing=args.unstable_spacing, max_modulus_product=args.max_product)
    save_plant(plant, args.out)
    return EXIT_OK


def _run_summary(run):
    stage3, stage4 = run.stage3, run.stage4
    return {
        "learning_steps": run.learning_steps,
        "max_norm": float(np.max(run.log.norms)),
        "stage3": {
            "omegas": list(stage3.omegas),
            "probe_times": list(stage3.probe_times),
            "probe_states": list(stage3.probe_states),
            "status": list(stage3.status),
            "premise_ok": list(stage3.premise_ok),
        },
        "stage4": {
            "K1_hat": stage4.K1_hat.tolist(),
            "closed_loop_rho": stage4.closed_loop_rho,
            "weighted_norm_U": stage4.weighted_norm_U,
            "K_norm": stage4.K_norm,
            "kappa_H": stage4.kappa_H,
        },
    }


def _failure(args, cfg, exc):
    print(f"run failed: {exc}", file=sys.stderr)
    if exc.log is not None:
        CSVGenerator.generate_trajectory_csv(args.out, exc.log)
    _write_json(args.report, {
        "config": cfg.to_dict(),
        "error": type(exc).__name__,
        "message": str(exc),
        "completed_stages": sorted(exc.partial),
    })
    return EXIT_RUN


def cmd_run(parser, args):
    plant = _load_plant(parser, args.plant)
    cfg = _lts_config(parser, args, plant)
    x0 = _parse_x0(parser, args.x0, plant.n)
    print(f"running {args.plant}")
    try:
        run = run_lts0n(plant, cfg, x0=x0, rng=run_rng(cfg.seed, plant.n, plant.noise.sigma))
    except LtsError as exc:
        return _failure(args, cfg, exc)

    CSVGenerator.generate_trajectory_csv(args.out, run.log)
    report = {"config": cfg.to_dict(), **_run_summary(run)}
    if plant.truth is not None and plant.k == cfg.k_hat:
        report["certificate"] = error_report(plant, run, cfg).to_dict()
    _write_json(args.report, report)
    return EXIT_OK


def cmd_sweep(parser, args):
    data = _read_json(parser, args.config) if args.config else {}
    if args.n:
        data["ns"] = args.n
    if args.sigma:
        data["sigmas"] = args.sigma
    if args.seeds is not None:
        if args.seeds < 1:
            parser.error("--seeds must be at least 1")
        data["seeds"] = list(range(1, args.seeds + 1))
    for name in ("k", "m"):
        if getattr(args, name) is not None:
            data[name] = getattr(args, name)
    if args.plant:
        data["plant_file"] = args.plant
    if data.get("plant_file"):
        _load_plant(parser, data["plant_file"])
    if args.baseline:
        data["baseline"] = True
    if args.out:
        data["output"] = args.out
    lts = dict(data.get("lts") or {})
    for name in ("T", "tau"):
        if getattr(args, name) is not None:
            lts[name] = getattr(args, name)
    data["lts"] = lts
    config = ExperimentConfig.from_dict(data)

    records = run_sweep(config, progress=print)
    CSVGenerator.generate_sweep_csv(config.output, records, summarize(records))
    return EXIT_OK


def cmd_baseline(parser, args):
    plant = _load_plant(parser, args.plant)
    horizon = args.horizon if args.horizon is not None else plant.n + plant.m * plant.n + 300
    print(f"running full-identification baseline on {args.plant}")
    try:
        status, log, explore = full_id_baseline(plant, horizon, run_rng(args.seed, plant.n, plant.noise.sigma))
    except ValueError as exc:
        parser.error(str(exc))
    record = baseline_record(plant, status, log, explore, seed=args.seed, sigma=plant.noise.sigma)
    CSVGenerator.generate_trajectory_csv(args.out, log)
    print(f"status={record.status} max_norm={record.max_norm:.6g} steps_to_stabilize={record.steps_to_stabilize}")
    return EXIT_OK


def cmd_check_bounds(parser, args):
    plant = _load_plant(parser, args.plant)
    if plant.truth is None:
        print("check-bounds needs a plant file that records k", file=sys.stderr)
        return EXIT_DOMAIN
    cfg = _lts_config(parser, args, plant)
    truth = plant.truth
    k, n = truth.k, plant.n
    if cfg.k_hat != k:
        parser.error(f"check-bounds compares against the plant's k={k}, got --k-hat {cfg.k_hat}")
    moduli = truth.moduli
    constants = compute_constants(plant, theta=args.theta, eps=tuple(args.eps), tau=cfg.tau, alpha=cfg.alpha,
                                  gamma=cfg.gamma, epsilon=cfg.epsilon, gelfand_horizon=cfg.gelfand_horizon)
    calculators = {
        "d1_gram_lower_bound": d1_gram_lower_bound(cfg.T, k, constants.gap, args.theta, moduli[0], moduli[k - 1]),
        "d2_norm_bound": d2_norm_bound(cfg.T, n, k, constants.C, moduli[k]),
        "T_bound": None,
    }
    if constants.C > 0:
        calculators["T_bound"] = theory_T_bound(n, k, cfg.epsilon, constants.gap, args.theta, constants.C,
                                                moduli[k - 1], moduli[k])

    print(f"checking bounds on {args.plant}")
    try:
        run = run_lts0n(plant, cfg, rng=run_rng(cfg.seed, n, plant.noise.sigma))
    except LtsError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    report = error_report(plant, run, cfg, constants)
    _write_json(args.report, {
        "constants": constants.to_dict(),
        "calculators": calculators,
        "delta_requirement": delta_requirement(constants, run.stage4, plant, cfg.tau),
        "certificate": report.to_dict(),
        "failed_checks": report.failed_checks(),
    })
    if report.dk_holds is False:
        print("projector perturbation exceeds its bound", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def build_parser():
    parser = ArgumentParser(prog="lts-stabilize", description="Learn to stabilize an unknown linear system")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress of every stage")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log errors")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="Generate a random plant")
    gen.add_argument("--n", type=int, required=True, help="State dimension")
    gen.add_argument("--k", type=int, required=True, help="Number of unstable eigenvalues")
    gen.add_argument("--m", type=int, required=True, help="Input dimension")
    gen.add_argument("--sigma", type=float, default=0.0, help="Noise standard deviation (default: 0, noiseless)")
    gen.add_argument("--noise", choices=NOISE_KINDS, help="Noise kind (default: gaussian when sigma > 0)")
    gen.add_argument("--c", type=float, default=0.0, help="Noise radius for uniform and truncated noise")
    gen.add_argument("--unstable-range", type=float, nargs=2, default=(1.1, 1.5), metavar=("LOW", "HIGH"))
    gen.add_argument("--stable-range", type=float, nargs=2, default=(0.05, 0.3), metavar=("LOW", "HIGH"))
    gen.add_argument("--cond-limit", type=float, default=1e4, help="Largest eigenbasis condition number")
    gen.add_argument("--unstable-spacing", type=float, default=MIN_UNSTABLE_SPACING,
                     help="Smallest relative gap between unstable moduli (default: 0.05)")
    gen.add_argument("--max-product", type=float, default=MAX_MODULUS_PRODUCT,
                     help="Largest |lambda_1|·|lambda_k+1| (default: 0.5)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("-o", "--out", default="plant.json", help="Output plant file (default: plant.json)")
    gen.set_defaults(handler=cmd_gen)

    run = commands.add_parser("run", help="Run the learner on one plant")
    run.add_argument("--plant", required=True, help="Plant JSON file")
    run.add_argument("--x0", help="Initial state as comma-separated values (default: zero)")
    _add_lts_flags(run)
    run.add_argument("-o", "--out", default="trajectory.csv", help="Trajectory CSV (default: trajectory.csv)")
    run.add_argument("--report", default="report.json", help="Report JSON (default: report.json)")
    run.set_defaults(handler=cmd_run)

    sweep = commands.add_parser("sweep", help="Run seeded sweeps over n and sigma")
    sweep.add_argument("--config", help="JSON file with sweep settings; flags override it")
    sweep.add_argument("--n", type=int, nargs="+", help="State dimensions")
    sweep.add_argument("--sigma", type=float, nargs="+", help="Noise levels")
    sweep.add_argument("--seeds", type=int, help="Run seeds 1..S")
    sweep.add_argument("--plant", help="Plant JSON file with k recorded; replaces --n, --k and --m")
    sweep.add_argument("--k", type=int)
    sweep.add_argument("--m", type=int)
    sweep.add_argument("--T", type=int)
    sweep.add_argument("--tau", type=int)
    sweep.add_argument("--baseline", action="store_true", help="Also run the full-identification baseline")
    sweep.add_argument("-o", "--out", help="Output CSV (default: sweep.csv)")
    sweep.set_defaults(handler=cmd_sweep)

    baseline = commands.add_parser("baseline", help="Run the full-identification baseline on one plant")
    baseline.add_argument("--plant", required=True, help="Plant JSON file")
    baseline.add_argument("--horizon", type=int, help="Total steps (default: n + m·n + 300)")
    baseline.add_argument("--seed", type=int, default=0)
    baseline.add_argument("-o", "--out", default="baseline.csv", help="Trajectory CSV (default: baseline.csv)")
    baseline.set_defaults(handler=cmd_baseline)

    check = commands.add_parser("check-bounds", help="Run the learner and evaluate every bound")
    check.add_argument("--plant", required=True, help="Plant JSON file with k recorded")
    _add_lts_flags(check)
    check.add_argument("--theta", type=float, default=DEFAULT_THETA, help="Failure probability parameter")
    check.add_argument("--eps", type=float, nargs=3, default=DEFAULT_EPS, metavar=("EPS1", "EPS2", "EPS4"))
    check.add_argument("--report", default="bounds.json", help="Report JSON (default: bounds.json)")
    check.set_defaults(handler=cmd_check_bounds)
    return parser


def main():
    parser = build_parser()
    args = parser.parse_args()
    level = logging.WARNING
    if args.verbose:
        level = logging.INFO
    if args.quiet:
        level = logging.ERROR
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(parser, args)
    except InvalidConfig as exc:
        parser.error(str(exc))
    except LtsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
