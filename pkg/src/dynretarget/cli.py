"""Command-line entry point: ``retarget run | report | plot | validate | model check``.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 missing file,
4 malformed input, 5 inconsistent dimensions or settings, 6 simulation blow-up,
7 infeasible trajectory (``validate`` only), 8 invalid model (``model check`` only).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys
from pathlib import Path

from . import io
from .cem_mpc import PROFILES, CemError, profile
from .dynamics import ContactModelParams, DynamicsConfig, DynamicsError
from .feasibility import DEFAULT_CONTACT_THRESHOLD, FeasibilityTolerances, check_trajectory_feasibility
from .model import ModelError, model_from_dict, validate_model
from .pipeline import METHODS, PipelineConfig, PipelineError, format_report, report, resolve_model, run
from .plotting import PLOT_KINDS, PlotError, plot
from .retarget_cost import CostWeights

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING, EXIT_FORMAT, EXIT_MISMATCH, EXIT_DYNAMICS = 0, 1, 2, 3, 4, 5, 6
EXIT_INFEASIBLE, EXIT_BAD_MODEL = 7, 8

log = logging.getLogger("dynretarget")


class UsageError(ValueError):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"0..4"`` (inclusive range), ``"3"`` or ``"0,2,5"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif re.fullmatch(r"-?\d+", part):
            seeds.append(int(part))
        else:
            raise UsageError(f"bad seed list {text!r}; use e.g. 0..4 or 0,1,2")
    return seeds


# --------------------------------------------------------------------------
# configuration


def _merge(obj, overrides: dict, where: str):
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = set(overrides) - names
    if unknown:
        raise UsageError(f"{where}: unknown keys {sorted(unknown)}")
    return dataclasses.replace(obj, **overrides)


def build_config(args, file_cfg: dict | None = None) -> PipelineConfig:
    """Flags first, then the config file on top of them."""
    cfg = dict(file_cfg or {})
    seeds = parse_seeds(args.seeds) if args.seeds is not None else None
    if args.seed is not None:
        seeds = [args.seed]
    if "seeds" in cfg:
        seeds = cfg.pop("seeds")
        seeds = parse_seeds(seeds) if isinstance(seeds, str) else [int(s) for s in seeds]

    prof = cfg.pop("profile", args.profile)
    cem_over = {k: v for k, v in (("population", args.population), ("iterations", args.iterations),
                                  ("horizon", args.horizon), ("workers", args.workers)) if v is not None}
    cem = _merge(profile(prof), {**cem_over, **cfg.pop("cem", {})}, "cem")

    weights = _merge(CostWeights(w_p=args.w_p, w_l=args.w_l), cfg.pop("weights", {}), "weights")
    dyn_cfg = dict(cfg.pop("dynamics", {}))
    contact = dyn_cfg.pop("contact", {})
    dyn = DynamicsConfig(mode=args.mode)
    dyn = _merge(dyn, dyn_cfg, "dynamics")
    if contact is None:
        dyn = dataclasses.replace(dyn, contact=None)
    elif contact:
        dyn = dataclasses.replace(dyn, contact=_merge(ContactModelParams(), contact, "dynamics.contact"))
    tol = _merge(FeasibilityTolerances(), cfg.pop("tolerances", {}), "tolerances")

    fields = dict(model=args.model, reference=args.reference, method=args.method, out=args.out,
                  truth=args.truth, clean=args.clean, contact_threshold=args.contact_threshold)
    for key in list(cfg):
        if key in fields or key == "keypoint_map":
            fields[key] = cfg.pop(key)
    if cfg:
        raise UsageError(f"config: unknown keys {sorted(cfg)}")
    if not fields["model"] or not fields["reference"]:
        raise UsageError("run needs --model and --reference (or both in --config)")
    kw = {k: v for k, v in fields.items() if v is not None}
    return PipelineConfig(seeds=seeds or [0], weights=weights, cem=cem, dynamics=dyn, tolerances=tol, **kw)


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise io.FormatError(f"{p}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise io.FormatError(f"{p}: config must be a JSON object")
    return data


# --------------------------------------------------------------------------
# verbs


def cmd_run(args) -> int:
    config = build_config(args, _read_config(args.config))
    results = run(config)
    for r in results:
        m = r.metrics
        print(f"{r.method} seed {r.seed}: infeasible {100 * m.infeasible_fraction:.1f}%  "
              f"distance {m.distance_to_reference:.4f}  -> {r.directory}")
    print(f"aggregate: {Path(config.out) / config.method / 'aggregate.json'}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = report(args.runs)
    if args.json:
        Path(args.json).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    print(format_report(rep))
    return EXIT_OK


def cmd_plot(args) -> int:
    from .pipeline import find_runs

    path = plot(find_runs(args.runs), args.kind, args.out, keypoint=args.keypoint)
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    model = resolve_model(args.model)
    traj, header = io.read_trajectory(args.trajectory)
    if traj.q.shape[1] != model.nq_config:
        raise PipelineError(f"{args.trajectory} has {traj.q.shape[1] - 7} joints, model {model.name!r} "
                            f"has {model.n_q}")
    contacts = io.read_contacts(args.contacts) if args.contacts else None
    rep = check_trajectory_feasibility(model, traj, threshold=args.contact_threshold, contacts=contacts)
    worst, t = rep.worst
    summary = {"trajectory": str(args.trajectory), "frames": rep.T, "eps_dyn": rep.eps_dyn,
               "infeasible_fraction": rep.infeasible_fraction, "indeterminate": rep.indeterminate_count,
               "worst_residual": worst, "worst_timestep": t,
               "infeasible_timesteps": [int(i) for i in (~rep.feasible).nonzero()[0]]}
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{rep.T} timesteps, {100 * rep.infeasible_fraction:.1f}% infeasible "
          f"({rep.indeterminate_count} indeterminate); worst residual {worst:.4g} N at t={t}")
    return EXIT_OK if rep.infeasible_fraction == 0 else EXIT_INFEASIBLE


def cmd_model_check(args) -> int:
    p = Path(args.path)
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise io.FormatError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    model = model_from_dict(doc, check=False)
    rep = validate_model(model)
    if rep.ok:
        print(f"{p}: ok ({model.name}, {model.n_q} joints, {model.m} keypoints, "
              f"{len(model.contact_points)} contact points, mass {model.total_mass:.3f} kg)")
        return EXIT_OK
    for v in rep.violations:
        print(f"{p}: {v}")
    return EXIT_BAD_MODEL


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="retarget", description="Dynamics-aware motion retargeting.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="retarget a reference and write artifacts")
    r.add_argument("--model", help="model JSON file or a shipped model name (mini-humanoid, planar-biped)")
    r.add_argument("--reference", help="keypoint file or a shipped fixture name (squat, drift, one-foot)")
    r.add_argument("--method", choices=METHODS, default="ddr")
    r.add_argument("--seeds", help="seed list, e.g. 0..4 or 0,2")
    r.add_argument("--seed", type=int, help="single seed (overrides --seeds)")
    r.add_argument("--profile", choices=sorted(PROFILES), default="fast")
    r.add_argument("--out", default="runs", help="output directory")
    r.add_argument("--config", help="JSON config; its keys override the flags")
    r.add_argument("--truth", help="ground-truth contact file")
    r.add_argument("--clean", help="joint-space reference trajectory for the joint RMSE")
    r.add_argument("--mode", choices=("target", "torque"), default="target", help="control interpretation")
    r.add_argument("--w-p", type=float, default=1.0, dest="w_p")
    r.add_argument("--w-l", type=float, default=1.0, dest="w_l")
    r.add_argument("--contact-threshold", type=float, default=DEFAULT_CONTACT_THRESHOLD)
    r.add_argument("--population", type=int)
    r.add_argument("--iterations", type=int)
    r.add_argument("--horizon", type=int)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compare finished runs")
    p.add_argument("runs", nargs="+", help="run directories or their parents")
    p.add_argument("--json", help="also write the machine-readable comparison here")
    p.set_defaults(func=cmd_report)

    g = sub.add_parser("plot", help="write an SVG figure from finished runs")
    g.add_argument("runs", nargs="+")
    g.add_argument("--kind", required=True, choices=PLOT_KINDS)
    g.add_argument("--out", default="plots")
    g.add_argument("--keypoint", default="pelvis")
    g.set_defaults(func=cmd_plot)

    v = sub.add_parser("validate", help="feasibility-check a trajectory file")
    v.add_argument("trajectory")
    v.add_argument("--model", default="mini-humanoid")
    v.add_argument("--contacts", help="contact file to use instead of the 2 cm rule")
    v.add_argument("--contact-threshold", type=float, default=DEFAULT_CONTACT_THRESHOLD)
    v.add_argument("--json", help="write a JSON summary here")
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("model", help="model utilities")
    msub = m.add_subparsers(dest="model_verb", required=True)
    mc = msub.add_parser("check", help="list every violated model invariant")
    mc.add_argument("path")
    mc.set_defaults(func=cmd_model_check)
    return ap


def _fail(kind: str, msg, code: int) -> int:
    print(f"retarget: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail("missing file", exc.args[0] if exc.args and not exc.filename else
                     f"{exc.strerror}: {exc.filename}", EXIT_MISSING)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except (io.FormatError, ModelError) as exc:
        return _fail("parse error", exc, EXIT_FORMAT)
    except DynamicsError as exc:
        return _fail("dynamics", exc, EXIT_DYNAMICS)
    except (PipelineError, PlotError, CemError, ValueError, KeyError) as exc:
        return _fail("invalid input", exc, EXIT_MISMATCH)


if __name__ == "__main__":
    sys.exit(main())
