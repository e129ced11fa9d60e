"""
Command-line front end for scenes, single estimates, sweeps, bounds,
operation counts and identifiability checks.

Configuration files are JSON. A file with a ``"scenario"`` key is read as an
experiment (see :class:`tendae.harness.ExperimentConfig`); any other object is
read as a bare scenario. Flags override file values.

Exit codes: 0 success, 2 identifiability violation, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .crlb import crlb_for_scene, write_crlb_csv
from .exceptions import IdentifiabilityError
from .harness import (
    ESTIMATORS,
    ExperimentConfig,
    _child_rng,
    _run_estimator,
    check_identifiability,
    complexity_estimate,
    run_sweep,
    write_outputs,
)
from .pipeline import KnownSystem
from .scenario import ScenarioConfig, build_scene, scene_to_json, synthesize

EXIT_OK = 0
EXIT_IDENTIFIABILITY = 2
EXIT_IO = 3


def _load_config(path):
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        d = json.load(fh)
    if "scenario" in d:
        return ExperimentConfig.from_dict(d)
    return ExperimentConfig(scenario=ScenarioConfig.from_dict(d))


def _experiment(args):
    exp = _load_config(args.config)
    scen = exp.scenario
    if args.ris_mode is not None:
        scen = replace(scen, ris_mode=args.ris_mode)
    if args.seed is not None:
        scen = replace(scen, seed=args.seed)
    changes = {"scenario": scen}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.snr is not None:
        changes["snr_grid_db"] = tuple(args.snr)
    if args.estimators is not None:
        changes["estimators"] = tuple(args.estimators)
    if args.out is not None:
        changes["outputs"] = args.out
    return replace(exp, **changes)


def _scene(exp, snr_db):
    cfg = exp.scenario
    scene = build_scene(cfg, _child_rng(cfg.seed, 0))
    return synthesize(scene, snr_db, _child_rng(cfg.seed, 1))


def _emit(text, out_dir, name):
    if out_dir is None:
        sys.stdout.write(text)
        return
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    print(path)


def cmd_check(exp, args):
    report = check_identifiability(exp.scenario, raise_on_violation=False, kruskal=True)
    print("\n".join(report.lines()))
    print(f"  stated Kruskal conditions (quoted, not asserted): {', '.join(report.stated_conditions)}")
    return EXIT_OK if report.ok else EXIT_IDENTIFIABILITY


def cmd_simulate(exp, args):
    scene = _scene(exp, exp.snr_grid_db[0])
    _emit(scene_to_json(scene) + "\n", exp.outputs if args.out else None, f"scene_{exp.scenario.seed}.json")
    return EXIT_OK


def _fmt(x):
    return "-" if x is None else f"{x:.6g}"


def cmd_estimate(exp, args):
    snr = exp.snr_grid_db[0]
    scene = _scene(exp, snr)
    known = KnownSystem.from_scene(scene)
    name = exp.estimators[-1] if args.estimators is None else args.estimators[0]
    out = _run_estimator(name, scene, known, exp.scenario.seed)
    print(f"estimator {name}  snr {snr} dB  seed {exp.scenario.seed}")
    if out.failed:
        print(f"failed: {out.error}")
        return EXIT_OK
    print(f"channel NMSE {out.nmse:.6e}")
    if out.matched is None:
        return EXIT_OK
    cols = ("tau", "nu", "phi_sr", "theta_sr", "phi_ris_d", "theta_ris_d", "alpha")
    print("target  " + "  ".join(f"{c:>12}" for c in cols))
    for i, (tr, es) in enumerate(zip(scene.targets, out.matched)):
        for tag, obj in (("true", tr), ("est", es)):
            vals = [getattr(obj, c) for c in cols[:-1]]
            cells = [f"{_fmt(v):>12}" for v in vals] + [f"{abs(obj.alpha):>12.4e}"]
            print(f"{i}:{tag:<5} " + "  ".join(cells))
    rep = out.report
    if rep.phi_ris_a is not None:
        print(f"RIS arrival: est ({rep.phi_ris_a:.6g}, {rep.theta_ris_a:.6g})"
              f"  true ({scene.phi_ris_a:.6g}, {scene.theta_ris_a:.6g})")
    return EXIT_OK


def cmd_sweep(exp, args):
    report = run_sweep(exp)
    csv_path, json_path = write_outputs(report, exp, exp.outputs)
    print(csv_path)
    print(json_path)
    return EXIT_OK


def cmd_crlb(exp, args):
    import io

    cfg = exp.scenario
    scene = build_scene(cfg, _child_rng(cfg.seed, 0))
    known = KnownSystem.from_scene(scene)
    buf = io.StringIO()
    for i, snr in enumerate(exp.snr_grid_db):
        rep = crlb_for_scene(scene, snr_db=snr, known=known)
        part = io.StringIO()
        write_crlb_csv(part, rep, extra={"snr_db": repr(float(snr))})
        lines = part.getvalue().splitlines(keepends=True)
        buf.write("".join(lines if i == 0 else lines[1:]))
    _emit(buf.getvalue(), exp.outputs if args.out else None, "crlb.csv")
    return EXIT_OK


def cmd_complexity(exp, args):
    names = exp.estimators if args.estimators is None else args.estimators
    for name in names:
        parts = complexity_estimate(exp.scenario, name, als_iter=args.als_iter)
        detail = ", ".join(f"{k}={v:.4g}" for k, v in parts.items() if k != "total")
        print(f"{name:<13} total {parts['total']:.4g}  ({detail})")
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "draw one scene and write it as JSON"),
    "estimate": (cmd_estimate, "run one estimator on one scene and print the estimates"),
    "sweep": (cmd_sweep, "Monte Carlo sweep written as CSV plus a JSON manifest"),
    "crlb": (cmd_crlb, "bounds for one scene over the SNR grid"),
    "complexity": (cmd_complexity, "operation counts for each estimator"),
    "check": (cmd_check, "identifiability report"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tendae", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment or scenario file")
        p.add_argument("--seed", type=int, help="scene seed (and master seed for sweeps)")
        p.add_argument("--trials", type=int)
        p.add_argument("--snr", type=float, nargs="+", help="SNR grid in dB")
        p.add_argument("--out", help="output directory")
        p.add_argument("--estimators", nargs="+", choices=ESTIMATORS)
        p.add_argument("--ris-mode", choices=("bd", "diagonal"))
        if name == "complexity":
            p.add_argument("--als-iter", type=int, default=10)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        exp = _experiment(args)
        if args.command != "check":
            check_identifiability(exp.scenario)
        return COMMANDS[args.command][0](exp, args)
    except IdentifiabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFIABILITY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
