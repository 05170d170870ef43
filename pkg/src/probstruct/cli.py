"""Command-line interface: ``generate``, ``solve``, ``evaluate``, ``replay``.

Exit codes: 0 success, 1 replay mismatch, 2 invalid input, 3 numerical
failure, 4 I/O error. ``PROBSTRUCT_SEED`` overrides the default seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import io as pio
from .ekf import ConvergenceTrace, CycleRecord, solve_unimodal
from .exceptions import (
    AlignmentError,
    DegenerateGeometryError,
    GenerationError,
    InvalidArgumentError,
    NumericalFailureError,
)
from .metrics import component_identification_rate, ellipsoids, error_summary, rmsd_superposed
from .mixture import StageLog, run_pipeline, solve_multicomponent
from .model import REHEAT_POLICIES, SolverConfig, check_constraints, collapse_mixture
from .synth import (
    EXPERIMENTS,
    ExperimentSpec,
    generate_ground_truth,
    ground_truth_from_coords,
    random_start,
    real_is_majority_fraction,
    real_is_max_weight_fraction,
    synthesize_constraints,
)

logger = logging.getLogger("probstruct")

EXIT_OK, EXIT_MISMATCH, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4
SEED_ENV = "PROBSTRUCT_SEED"
MANIFEST = "manifest.json"
_DEFAULTS = SolverConfig()


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CommandError(f"{SEED_ENV}={raw!r} is not an integer", EXIT_INVALID) from None


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"input file not found: {p}", EXIT_IO)
    return p


def _write_manifest(out_dir: Path, command: str, args: dict, outputs: dict, inputs: dict,
                    timings: dict, extra: dict = None) -> None:
    manifest = {
        "command": command,
        "args": args,
        "inputs": {name: {"path": str(Path(p).resolve()), "sha256": pio.sha256(p)}
                   for name, p in sorted(inputs.items())},
        "outputs": {name: Path(p).name for name, p in sorted(outputs.items())},
        "checksums": pio.checksums(outputs),
        "timings_s": timings,
    }
    if extra:
        manifest.update(extra)
    pio.write_json(out_dir / MANIFEST, manifest)


# -- generate ---------------------------------------------------------------

def _spec_from_args(ns) -> ExperimentSpec:
    base = EXPERIMENTS.get(ns.experiment, ExperimentSpec())
    fields = {}
    for name in ("real_weight_min", "real_weight_max", "real_variance",
                 "noise_count_min", "noise_count_max"):
        value = getattr(ns, name)
        fields[name] = getattr(base, name) if value is None else value
    fields["noise_mean_range"] = tuple(ns.noise_mean_range or base.noise_mean_range)
    fields["noise_variance_range"] = tuple(ns.noise_variance_range or base.noise_variance_range)
    return ExperimentSpec(seed=ns.seed, **fields)


def cmd_generate(ns) -> int:
    if ns.experiment != "custom" and any(
            getattr(ns, k) is not None for k in ("real_weight_min", "real_weight_max",
                                                 "real_variance", "noise_count_min",
                                                 "noise_count_max", "noise_mean_range",
                                                 "noise_variance_range")):
        raise CommandError("constraint-spec flags are only accepted with --experiment custom",
                           EXIT_INVALID)
    spec = _spec_from_args(ns)
    inputs = {}
    t0 = time.perf_counter()
    if ns.truth:
        inputs["truth"] = _existing(ns.truth)
        truth = ground_truth_from_coords(pio.load_structure(ns.truth).coords, ns.seed)
    else:
        truth = generate_ground_truth(ns.n_points, ns.seed)
    constraints, key = synthesize_constraints(truth, spec)
    collapsed = [collapse_mixture(c) for c in constraints]
    elapsed = time.perf_counter() - t0

    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {
        "truth": out / "truth.json",
        "constraints": out / "constraints.json",
        "collapsed": out / "collapsed.json",
        "answer_key": out / "answer_key.json",
    }
    pio.write_json(outputs["truth"], {"n_points": truth.n_points,
                                      "mean": truth.mean.tolist(),
                                      "provenance": truth.provenance.value,
                                      "seed": truth.seed})
    pio.save_constraints(outputs["constraints"], constraints)
    pio.save_constraints(outputs["collapsed"], collapsed)
    pio.save_answer_key(outputs["answer_key"], key)
    args = {
        "experiment": ns.experiment,
        "seed": ns.seed,
        "n_points": truth.n_points,
        "truth": str(Path(ns.truth).resolve()) if ns.truth else None,
        "spec": dataclasses.asdict(spec),
    }
    _write_manifest(out, "generate", args, outputs, inputs, {"generate": elapsed},
                    {"stats": {
                        "n_constraints": len(constraints),
                        "real_is_max_weight_fraction": real_is_max_weight_fraction(constraints, key),
                        "real_is_majority_fraction": real_is_majority_fraction(constraints, key),
                    }})
    print(f"wrote {len(constraints)} constraints for {truth.n_points} points to {out}")
    return EXIT_OK


# -- solve ------------------------------------------------------------------

def _config_from_args(ns) -> SolverConfig:
    return SolverConfig(
        batch_size=ns.batch_size,
        branch_cap=ns.branches,
        max_cycles=ns.max_cycles,
        convergence_tol=ns.convergence_tol,
        reheat_threshold=ns.reheat_threshold,
        initial_variance=ns.initial_variance,
        coordinate_range=ns.coordinate_range,
        rng_seed=ns.seed,
        n_jobs=ns.threads,
        reheat_policy=ns.reheat_policy,
        cycle_restart=not ns.no_cycle_restart,
    )


def _combined_trace(first: ConvergenceTrace, second: ConvergenceTrace) -> ConvergenceTrace:
    out = ConvergenceTrace(initial_avg_error=first.initial_avg_error,
                           initial_max_error=first.initial_max_error)
    for r in first:
        out.append(r)
    offset = len(first)
    for r in second:
        out.append(CycleRecord(r.cycle + offset, r.avg_error, r.max_error, r.rmsd, r.reheated))
    return out


def cmd_solve(ns) -> int:
    config = _config_from_args(ns)
    inputs = {"constraints": _existing(ns.constraints)}
    constraints = pio.load_constraints(ns.constraints)
    if not constraints:
        raise CommandError(f"{ns.constraints}: no constraints", EXIT_INVALID)
    reference = None
    if ns.reference:
        inputs["reference"] = _existing(ns.reference)
        reference = pio.load_structure(ns.reference).coords
    if ns.init:
        inputs["init"] = _existing(ns.init)
        init = pio.load_structure(ns.init, default_variance=config.initial_variance)
    else:
        n_points = ns.n_points
        if n_points is None:
            n_points = reference.shape[0] if reference is not None else \
                1 + max(max(c.i, c.j) for c in constraints)
        init = random_start(n_points, config)
    check_constraints(constraints, init.n_points)
    if reference is not None and reference.shape != (init.n_points, 3):
        raise CommandError(f"reference has {reference.shape[0]} points, expected "
                           f"{init.n_points}", EXIT_INVALID)

    out = Path(ns.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    stage_log = StageLog() if ns.stage_log else None
    t0 = time.perf_counter()
    if ns.mode == "unimodal":
        uni = [collapse_mixture(c) for c in constraints]
        if any(not c.is_unimodal for c in constraints):
            logger.info("collapsing mixture constraints for the unimodal solver")
        state, trace = solve_unimodal(init, uni, config, reference)
    elif ns.mode == "multicomponent":
        state, trace = solve_multicomponent(init, constraints, config, reference, stage_log)
    else:
        result = run_pipeline(init, constraints, config, ns.warm_cycles, reference, stage_log)
        state = result.state
        trace = _combined_trace(result.warm_trace, result.trace)
        outputs["warm_structure"] = out / "warm_structure.json"
        pio.save_structure(outputs["warm_structure"], result.warm_state)
        outputs["warm_trace"] = out / "warm_trace.csv"
        result.warm_trace.to_csv(outputs["warm_trace"])
        outputs["multicomponent_trace"] = out / "multicomponent_trace.csv"
        result.trace.to_csv(outputs["multicomponent_trace"])
    elapsed = time.perf_counter() - t0

    outputs["structure"] = out / "structure.json"
    pio.save_structure(outputs["structure"], state)
    outputs["trace"] = out / "trace.csv"
    trace.to_csv(outputs["trace"])
    outputs["ellipsoids"] = out / "ellipsoids.json"
    pio.write_json(outputs["ellipsoids"], ellipsoids(state))
    if stage_log is not None:
        outputs["stage_log"] = out / "stage_log.json"
        pio.write_json(outputs["stage_log"], stage_log.stages)

    summary = error_summary(state, constraints)
    args = {
        "mode": ns.mode,
        "constraints": str(Path(ns.constraints).resolve()),
        "init": str(Path(ns.init).resolve()) if ns.init else None,
        "reference": str(Path(ns.reference).resolve()) if ns.reference else None,
        "n_points": init.n_points,
        "warm_cycles": ns.warm_cycles,
        "stage_log": bool(ns.stage_log),
        "config": dataclasses.asdict(config),
    }
    # Thread count never changes results; it is kept out of the replay contract.
    args["config"].pop("n_jobs")
    _write_manifest(out, "solve", args, outputs, inputs, {"solve": elapsed},
                    {"result": {"avg_error_sd": summary.average,
                                "max_error_sd": summary.maximum,
                                "cycles": len(trace)}})
    print(f"{ns.mode}: {len(trace)} cycles, average error {summary.average:.4g} SD, "
          f"maximum {summary.maximum:.4g} SD -> {out}")
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------

def evaluate_files(structure, truth, constraints, answer_key=None) -> dict:
    state = pio.load_structure(_existing(structure))
    truth_state = pio.load_structure(_existing(truth))
    cons = pio.load_constraints(_existing(constraints))
    if state.n_points != truth_state.n_points:
        raise CommandError(
            f"structure has {state.n_points} points but truth has {truth_state.n_points}",
            EXIT_INVALID)
    for k, c in enumerate(cons):
        if max(c.i, c.j) >= state.n_points:
            raise CommandError(f"constraint {k} references a point beyond the structure",
                               EXIT_INVALID)
    summary = error_summary(state, cons)
    sup = rmsd_superposed(state.coords, truth_state.coords, allow_reflection=True)
    report = {
        "n_points": state.n_points,
        "n_constraints": len(cons),
        "avg_error_sd": summary.average,
        "max_error_sd": summary.maximum,
        "rmsd_angstrom": sup.rmsd,
        "rmsd_proper_angstrom": sup.proper_rmsd,
        "rmsd_mirror_angstrom": sup.mirror_rmsd,
        "mirror_used": sup.reflected,
        "identification_rate": None,
    }
    if answer_key:
        key = pio.load_answer_key(_existing(answer_key))
        report["identification_rate"] = component_identification_rate(state, cons, key)
    return report


def cmd_evaluate(ns) -> int:
    report = evaluate_files(ns.structure, ns.truth, ns.constraints, ns.answer_key)
    text = pio.dumps(report)
    if ns.out:
        Path(ns.out).parent.mkdir(parents=True, exist_ok=True)
        Path(ns.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# -- replay -----------------------------------------------------------------

def _argv_from_manifest(manifest: dict, out_dir: str) -> list:
    cmd, a = manifest["command"], manifest["args"]
    if cmd == "generate":
        argv = ["generate", "--experiment", a["experiment"], "--seed", str(a["seed"]),
                "--n-points", str(a["n_points"]), "--out-dir", out_dir]
        if a.get("truth"):
            argv += ["--truth", a["truth"]]
        if a["experiment"] == "custom":
            s = a["spec"]
            argv += ["--real-weight-min", repr(s["real_weight_min"]),
                     "--real-weight-max", repr(s["real_weight_max"]),
                     "--real-variance", repr(s["real_variance"]),
                     "--noise-count-min", str(s["noise_count_min"]),
                     "--noise-count-max", str(s["noise_count_max"]),
                     "--noise-mean-range", *map(repr, s["noise_mean_range"]),
                     "--noise-variance-range", *map(repr, s["noise_variance_range"])]
        return argv
    if cmd == "solve":
        c = a["config"]
        argv = ["solve", "--mode", a["mode"], "--constraints", a["constraints"],
                "--out-dir", out_dir, "--warm-cycles", str(a["warm_cycles"]),
                "--batch-size", str(c["batch_size"]), "--branches", str(c["branch_cap"]),
                "--max-cycles", str(c["max_cycles"]),
                "--convergence-tol", repr(c["convergence_tol"]),
                "--reheat-threshold", repr(c["reheat_threshold"]),
                "--reheat-policy", c["reheat_policy"],
                "--initial-variance", repr(c["initial_variance"]),
                "--coordinate-range", repr(c["coordinate_range"]),
                "--seed", str(c["rng_seed"])]
        if not c["cycle_restart"]:
            argv.append("--no-cycle-restart")
        for name in ("init", "reference"):
            if a.get(name):
                argv += [f"--{name}", a[name]]
        if a.get("n_points") and not a.get("init"):
            argv += ["--n-points", str(a["n_points"])]
        if a.get("stage_log"):
            argv.append("--stage-log")
        return argv
    raise CommandError(f"manifest command {cmd!r} cannot be replayed", EXIT_INVALID)


def cmd_replay(ns) -> int:
    manifest = pio.read_json(_existing(ns.manifest))
    for name, info in manifest.get("inputs", {}).items():
        p = Path(info["path"])
        if not p.is_file():
            raise CommandError(f"replay input {name} missing: {p}", EXIT_IO)
        if pio.sha256(p) != info["sha256"]:
            raise CommandError(f"replay input {name} changed since the run: {p}", EXIT_INVALID)
    out_dir = ns.out_dir or tempfile.mkdtemp(prefix="probstruct-replay-")
    code = main(_argv_from_manifest(manifest, out_dir))
    if code != EXIT_OK:
        return code
    mismatched = []
    for name, filename in manifest["outputs"].items():
        path = Path(out_dir) / filename
        if not path.is_file() or pio.sha256(path) != manifest["checksums"][name]:
            mismatched.append(name)
    if mismatched:
        print(f"replay mismatch in {', '.join(sorted(mismatched))} (outputs in {out_dir})")
        return EXIT_MISMATCH
    print(f"replay reproduced {len(manifest['outputs'])} outputs bit-exactly in {out_dir}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probstruct",
        description="Estimate point structures from uncertain distance constraints.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic experiment data set")
    g.add_argument("--experiment", choices=sorted(EXPERIMENTS) + ["custom"], default="exp1")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--n-points", type=int, default=21)
    g.add_argument("--truth", help="JSON structure file to use instead of a generated chain")
    g.add_argument("--real-weight-min", type=float)
    g.add_argument("--real-weight-max", type=float)
    g.add_argument("--real-variance", type=float)
    g.add_argument("--noise-count-min", type=int)
    g.add_argument("--noise-count-max", type=int)
    g.add_argument("--noise-mean-range", type=float, nargs=2, metavar=("LO", "HI"))
    g.add_argument("--noise-variance-range", type=float, nargs=2, metavar=("LO", "HI"))
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="estimate a structure from a constraint file")
    s.add_argument("--mode", choices=("unimodal", "multicomponent", "pipeline"),
                   default="pipeline")
    s.add_argument("--constraints", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--init", help="starting structure (default: random start)")
    s.add_argument("--reference", help="reference structure for per-cycle RMSD")
    s.add_argument("--n-points", type=int)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=_DEFAULTS.batch_size)
    s.add_argument("--branches", type=int, default=_DEFAULTS.branch_cap,
                   help="maximum branches per fan stage")
    s.add_argument("--max-cycles", type=int, default=_DEFAULTS.max_cycles)
    s.add_argument("--warm-cycles", type=int, default=15,
                   help="pipeline mode: cycles given to the warm start")
    s.add_argument("--convergence-tol", type=float, default=_DEFAULTS.convergence_tol)
    s.add_argument("--reheat-threshold", type=float, default=_DEFAULTS.reheat_threshold)
    s.add_argument("--reheat-policy", choices=REHEAT_POLICIES, default=_DEFAULTS.reheat_policy)
    s.add_argument("--no-cycle-restart", action="store_true",
                   help="carry the contracted covariance from cycle to cycle")
    s.add_argument("--initial-variance", type=float, default=_DEFAULTS.initial_variance)
    s.add_argument("--coordinate-range", type=float, default=_DEFAULTS.coordinate_range)
    s.add_argument("--threads", type=int, default=1,
                   help="worker threads for fan-stage branches (results are identical)")
    s.add_argument("--stage-log", action="store_true", help="write stage_log.json")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="compare a solved structure with the truth")
    e.add_argument("--structure", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--constraints", required=True)
    e.add_argument("--answer-key")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    r.add_argument("manifest")
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(ns, "seed", None) is None and hasattr(ns, "seed"):
            ns.seed = _default_seed()
        return ns.func(ns)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidArgumentError, AlignmentError, DegenerateGeometryError,
            GenerationError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
