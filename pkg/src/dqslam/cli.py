"""Command-line harness: simulate datasets, solve trials, run batch
evaluations.

Subcommands:
    simulate   generate one dataset file for a seed
    solve      solve one dataset in either mode, write results (+ SVG map)
    evaluate   run n seeded trials through simulate -> solve -> metrics in
               both modes, write a per-trial CSV and an aggregate summary
    rerun      re-execute the command recorded in a run manifest

Every world, sensor, solver and factor-noise parameter is exposed as a
kebab-case flag; defaults reproduce the published synthetic evaluation
setup. Each command writes a run manifest listing its outputs, and reruns
with equal flags and seeds reproduce those outputs byte for byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from dataclasses import asdict, fields

import numpy as np

from . import __version__
from .dataset_io import read_dataset, write_dataset
from .initialization import InitStrategy
from .metrics import MODES, aggregate, format_table
from .pipeline import GraphNoiseConfig, run_trial
from .simulator import SensorConfig, WorldConfig, generate_dataset
from .solver import SolverConfig
from .svgplot import trial_svg

__all__ = ["main"]

MANIFEST_SCHEMA = "dqslam.run-manifest"
RESULTS_SCHEMA = "dqslam.results"

CSV_COLUMNS = (
    "seed",
    "mode",
    "rmse_pos_init",
    "rmse_pos_slam",
    "rmse_lm",
    "rmse_volume",
    "volume_invalid_count",
    "iterations",
    "final_cost",
)


def _fmt_float(v: float) -> str:
    # Positional (decimal-point) notation with 12 significant digits.
    return np.format_float_positional(
        float(v), precision=12, unique=False, fractional=False
    )


# -- flag plumbing ---------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _checked(flagname: str, caster, predicate, describe: str):
    def parse(text):
        try:
            value = caster(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flagname}: not a {caster.__name__}")
        if predicate is not None and not predicate(value):
            raise argparse.ArgumentTypeError(f"{flagname}: must be {describe}")
        return value

    parse.__name__ = caster.__name__
    return parse


_POS = (lambda v: v > 0, "positive")
_NONNEG = (lambda v: v >= 0, "nonnegative")
_ANY = (None, "")

# field name -> (type, (predicate, description))
_WORLD_SPEC = {
    "n_landmarks": (int, _POS),
    "landmark_z_sigma": (float, _NONNEG),
    "cube_side_mean": (float, _POS),
    "cube_side_sigma": (float, _NONNEG),
    "cube_side_floor": (float, _POS),
    "trajectory_length": (float, _POS),
    "n_loops": (int, _POS),
    "step_length": (float, _POS),
    "turn_steps": (int, _POS),
    "offset_min": (float, _POS),
    "offset_max": (float, _POS),
    "landmark_shape": (str, _ANY),
    "landmark_min_detections": (int, (lambda v: v >= 3, "at least 3")),
    "landmark_min_condition": (float, _NONNEG),
    "seed": (int, _ANY),
}
_SENSOR_SPEC = {
    "focal_mm": (float, _POS),
    "pixel_size_m": (float, _POS),
    "image_width": (int, _POS),
    "image_height": (int, _POS),
    "detection_min_px": (float, _POS),
    "bbox_corner_sigma_px": (float, _NONNEG),
    "odo_sigma": (float, _NONNEG),
    "odo_turn_omega_sigma": (float, _NONNEG),
    "relpos_sigma_m": (float, _NONNEG),
}
_SOLVER_SPEC = {
    "max_iterations": (int, _POS),
    "initial_lambda": (float, _NONNEG),
    "lambda_up": (float, (lambda v: v > 1, "greater than 1")),
    "lambda_down": (float, (lambda v: 0 < v < 1, "strictly between 0 and 1")),
    "rel_cost_tol": (float, _POS),
    "grad_tol": (float, _POS),
}
_NOISE_SPEC = {
    "prior_sigma": (float, _POS),
    "odo_sigma_xy": (float, _POS),
    "odo_sigma_theta": (float, _POS),
    "odo_sigma_theta_turn": (float, _POS),
    "bbox_line_sigma": (float, _POS),
    "relpos_sigma": (float, _POS),
}


def _add_config_flags(parser, cls, spec, skip=()):
    defaults = {f.name: f.default for f in fields(cls)}
    for name, (caster, (pred, desc)) in spec.items():
        if name in skip:
            continue
        flagname = _flag(name)
        kwargs = dict(
            default=defaults[name],
            help=f"{name.replace('_', ' ')} (default: {defaults[name]})",
        )
        if name == "landmark_shape":
            kwargs["choices"] = ("cube", "sphere")
        else:
            kwargs["type"] = _checked(flagname, caster, pred, desc)
        parser.add_argument(flagname, **kwargs)


def _config_from_args(cls, spec, args, skip=(), **overrides):
    values = {
        name: getattr(args, name) for name in spec if name not in skip
    }
    values.update(overrides)
    return cls(**values)


# -- manifest ---------------------------------------------------------------

def _write_manifest(path, command, argv, config: dict, seeds, artifacts, timings):
    doc = {
        "schema": MANIFEST_SCHEMA,
        "version": 1,
        "tool_version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seeds": list(seeds),
        "artifacts": [str(a) for a in artifacts],
        "timings_s": {k: float(v) for k, v in timings.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# -- simulate ---------------------------------------------------------------

def _cmd_simulate(args, argv) -> int:
    world = _config_from_args(WorldConfig, _WORLD_SPEC, args)
    sensor = _config_from_args(SensorConfig, _SENSOR_SPEC, args)
    t0 = time.perf_counter()
    dataset = generate_dataset(world, sensor)
    write_dataset(dataset, args.out)
    elapsed = time.perf_counter() - t0

    counts = dataset.detections_per_landmark()
    print(f"wrote {args.out}")
    print(
        f"poses: {len(dataset.ground_truth_poses)}  "
        f"detections: {len(dataset.detections)}  "
        f"landmarks: {len(dataset.landmarks)}"
    )
    print("detections per landmark:", " ".join(f"{j}:{n}" for j, n in sorted(counts.items())))
    _write_manifest(
        _manifest_path(args.out),
        "simulate",
        argv,
        {"world": asdict(world), "sensor": asdict(sensor)},
        [world.seed],
        [args.out],
        {"simulate": elapsed},
    )
    return 0


def _manifest_path(out_path) -> str:
    return str(out_path) + ".manifest.json"


# -- solve ------------------------------------------------------------------

def _solve_svg(run) -> str:
    gt = np.array([[p.x, p.y] for p in run.dataset.ground_truth_poses])
    init = np.array([[p.x, p.y] for p in run.initial_graph.poses])
    slam = np.array([[p.x, p.y] for p in run.solved_graph.poses])
    gt_lm = np.array([lm.center[:2] for lm in run.dataset.landmarks])
    init_lm = np.array([q.centroid()[:2] for q in run.initial_graph.quadrics])
    slam_lm = np.array([q.centroid()[:2] for q in run.solved_graph.quadrics])
    return trial_svg(gt, init, slam, gt_lm, init_lm, slam_lm)


def _results_doc(run) -> dict:
    r = run.result
    return {
        "schema": RESULTS_SCHEMA,
        "version": 1,
        "seed": int(r.seed),
        "mode": r.mode,
        "report": {
            "iterations": run.report.iterations,
            "initial_cost": run.report.initial_cost,
            "final_cost": run.report.final_cost,
            "converged": run.report.converged,
            "termination_reason": run.report.termination_reason,
        },
        "metrics": {
            "rmse_pos_init": r.rmse_pos_init,
            "rmse_pos_slam": r.rmse_pos_slam,
            "rmse_lm": r.rmse_lm,
            "rmse_volume": r.rmse_volume,
            "volume_invalid_count": r.volume_invalid_count,
        },
        "estimates": {
            "poses": [[p.x, p.y, p.theta] for p in run.solved_graph.poses],
            "quadrics": [[float(v) for v in q.q] for q in run.solved_graph.quadrics],
        },
    }


def _cmd_solve(args, argv) -> int:
    dataset = read_dataset(args.dataset)
    noise = _config_from_args(GraphNoiseConfig, _NOISE_SPEC, args)
    solver_cfg = _config_from_args(SolverConfig, _SOLVER_SPEC, args)
    strategy = InitStrategy(mode=args.init, condition_threshold=args.condition_threshold)

    t0 = time.perf_counter()
    run = run_trial(
        dataset,
        mode=args.mode,
        noise=noise,
        solver_config=solver_cfg,
        init_strategy=strategy,
    )
    elapsed = time.perf_counter() - t0

    doc = _results_doc(run)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    artifacts = [args.out]
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(_solve_svg(run))
        artifacts.append(args.svg)

    rep = run.report
    r = run.result
    print(
        f"{args.mode}: {rep.termination_reason} after {rep.iterations} iterations, "
        f"cost {rep.initial_cost:.6g} -> {rep.final_cost:.6g}"
    )
    print(
        f"rmse_pos init {r.rmse_pos_init:.4f} m -> slam {r.rmse_pos_slam:.4f} m; "
        f"rmse_lm {r.rmse_lm:.4f} m"
    )
    _write_manifest(
        _manifest_path(args.out),
        "solve",
        argv,
        {
            "noise": asdict(noise),
            "solver": asdict(solver_cfg),
            "init": {"mode": strategy.mode, "condition_threshold": strategy.condition_threshold},
            "mode": args.mode,
            "dataset": str(args.dataset),
        },
        [dataset.seed],
        artifacts,
        {"solve": elapsed},
    )
    failed = rep.termination_reason == "stalled" or not np.isfinite(rep.final_cost)
    return 1 if failed else 0


# -- evaluate ---------------------------------------------------------------

def _evaluate_seed(payload):
    """Worker: one seed through both modes (shared dataset)."""
    (seed, world_kwargs, sensor_kwargs, noise_kwargs, solver_kwargs,
     init_mode, condition_threshold) = payload
    try:
        world = WorldConfig(seed=seed, **world_kwargs)
        sensor = SensorConfig(**sensor_kwargs)
        dataset = generate_dataset(world, sensor)
        results = []
        for mode in MODES:
            run = run_trial(
                dataset,
                mode=mode,
                noise=GraphNoiseConfig(**noise_kwargs),
                solver_config=SolverConfig(**solver_kwargs),
                init_strategy=InitStrategy(init_mode, condition_threshold),
            )
            results.append(run.result)
        return seed, results, None
    except Exception as exc:  # trial failure: recorded, run continues
        return seed, None, f"{type(exc).__name__}: {exc}"


def _csv_row(result) -> str:
    return ",".join(
        [
            str(result.seed),
            result.mode,
            _fmt_float(result.rmse_pos_init),
            _fmt_float(result.rmse_pos_slam),
            _fmt_float(result.rmse_lm),
            _fmt_float(result.rmse_volume),
            str(result.volume_invalid_count),
            str(result.iterations),
            _fmt_float(result.final_cost),
        ]
    )


def _cmd_evaluate(args, argv) -> int:
    world_kwargs = {
        name: getattr(args, name) for name in _WORLD_SPEC if name != "seed"
    }
    sensor_kwargs = {name: getattr(args, name) for name in _SENSOR_SPEC}
    noise_kwargs = {name: getattr(args, name) for name in _NOISE_SPEC}
    solver_kwargs = {name: getattr(args, name) for name in _SOLVER_SPEC}
    seeds = [args.base_seed + i for i in range(args.trials)]
    payloads = [
        (seed, world_kwargs, sensor_kwargs, noise_kwargs, solver_kwargs,
         args.init, args.condition_threshold)
        for seed in seeds
    ]

    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    outcomes = {}
    workers = args.workers or os.cpu_count() or 1
    if workers == 1:
        for payload in payloads:
            seed, results, error = _evaluate_seed(payload)
            outcomes[seed] = (results, error)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, results, error in pool.map(_evaluate_seed, payloads):
                outcomes[seed] = (results, error)
    elapsed = time.perf_counter() - t0

    all_results, failures = [], {}
    for seed in seeds:
        results, error = outcomes[seed]
        if error is not None:
            failures[seed] = error
        else:
            all_results.extend(results)

    csv_path = os.path.join(args.out_dir, "results.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for result in all_results:
            fh.write(_csv_row(result) + "\n")

    summary = aggregate(all_results) if all_results else {}
    summary_doc = {
        "schema": "dqslam.summary",
        "version": 1,
        "n_trials": args.trials,
        "base_seed": args.base_seed,
        "n_failures": len(failures),
        "failures": {str(k): v for k, v in sorted(failures.items())},
        "aggregate": summary,
    }
    summary_path = os.path.join(args.out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary_doc, fh, indent=1)
        fh.write("\n")

    if summary:
        print(format_table(summary))
    if failures:
        print(f"{len(failures)} of {args.trials} trials failed:", file=sys.stderr)
        for seed, msg in sorted(failures.items()):
            print(f"  seed {seed}: {msg}", file=sys.stderr)

    manifest_path = os.path.join(args.out_dir, "run_manifest.json")
    _write_manifest(
        manifest_path,
        "evaluate",
        argv,
        {
            "world": world_kwargs,
            "sensor": sensor_kwargs,
            "noise": noise_kwargs,
            "solver": solver_kwargs,
            "init": {"mode": args.init, "condition_threshold": args.condition_threshold},
            "workers": workers,
        },
        seeds,
        [csv_path, summary_path],
        {"evaluate": elapsed},
    )
    return 1 if failures else 0


# -- rerun ------------------------------------------------------------------

def _cmd_rerun(args, _argv) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise SystemExit(f"{args.manifest}: not a run manifest")
    return main(doc["argv"])


# -- parser -----------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dqslam",
        description="SLAM with dual-quadric object landmarks: synthetic "
        "dataset generation, solving and batch evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"dqslam {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser(
        "simulate",
        help="generate a dataset file",
        description="Generate one synthetic trial dataset. Defaults follow "
        "the published evaluation setup (130 m two-loop trajectory, 10 cube "
        "landmarks, 15 mm / 10 um / 1280x1024 camera, 1 px box noise).",
    )
    _add_config_flags(p_sim, WorldConfig, _WORLD_SPEC)
    _add_config_flags(p_sim, SensorConfig, _SENSOR_SPEC)
    p_sim.add_argument("--out", required=True, help="output dataset path (JSON)")

    p_solve = sub.add_parser(
        "solve",
        help="solve one dataset",
        description="Solve a dataset in monocular or with-relpos mode and "
        "write results (and optionally an SVG map: blue = odometry "
        "initialization, green = ground truth, red = SLAM).",
    )
    p_solve.add_argument("--dataset", required=True, help="dataset path")
    p_solve.add_argument(
        "--mode", choices=MODES, default="monocular", help="factor set to use"
    )
    p_solve.add_argument(
        "--init",
        choices=("identity", "svd", "svd-with-fallback"),
        default="identity",
        help="quadric initialization strategy (default: identity)",
    )
    p_solve.add_argument(
        "--condition-threshold",
        type=float,
        default=0.1,
        help="SVD acceptance ratio for the degeneracy test (default: 0.1)",
    )
    _add_config_flags(p_solve, SolverConfig, _SOLVER_SPEC)
    _add_config_flags(p_solve, GraphNoiseConfig, _NOISE_SPEC)
    p_solve.add_argument("--out", required=True, help="output results path (JSON)")
    p_solve.add_argument("--svg", default=None, help="optional SVG map path")

    p_eval = sub.add_parser(
        "evaluate",
        help="run a seeded batch of trials in both modes",
        description="Run n seeded trials (seed_i = base-seed + i) through "
        "simulate -> solve -> metrics in both modes, sharing each trial's "
        "dataset across modes, and write per-trial CSV plus an aggregate "
        "summary in the published table layout.",
    )
    p_eval.add_argument("--trials", type=int, default=50, help="number of trials (default: 50)")
    p_eval.add_argument("--base-seed", type=int, default=0, help="first seed (default: 0)")
    p_eval.add_argument("--out-dir", required=True, help="output directory")
    p_eval.add_argument(
        "--workers",
        type=int,
        default=0,
        help="worker processes (default: 0 = available parallelism)",
    )
    p_eval.add_argument(
        "--init",
        choices=("identity", "svd", "svd-with-fallback"),
        default="identity",
        help="quadric initialization strategy (default: identity)",
    )
    p_eval.add_argument("--condition-threshold", type=float, default=0.1)
    _add_config_flags(p_eval, WorldConfig, _WORLD_SPEC, skip=("seed",))
    _add_config_flags(p_eval, SensorConfig, _SENSOR_SPEC)
    _add_config_flags(p_eval, SolverConfig, _SOLVER_SPEC)
    _add_config_flags(p_eval, GraphNoiseConfig, _NOISE_SPEC)

    p_rerun = sub.add_parser(
        "rerun",
        help="re-execute a recorded run manifest",
        description="Re-execute the command stored in a run manifest; "
        "outputs are reproduced byte-identically.",
    )
    p_rerun.add_argument("manifest", help="path to a run manifest JSON")

    return parser


_COMMANDS = {
    "simulate": _cmd_simulate,
    "solve": _cmd_solve,
    "evaluate": _cmd_evaluate,
    "rerun": _cmd_rerun,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, argv)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
