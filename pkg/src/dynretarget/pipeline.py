"""End-to-end runs: retarget a reference with GR, IDR or DDR, evaluate, and write artifacts.

Layout of an output directory::

    OUT/<method>/seed-<k>/     (GR: OUT/gr/seed-0, computed once)
        run.json               run id, seed, method, model, reference, settings
        trajectory.txt         retargeted configurations
        keypoints.txt          their keypoints
        reference.txt          reference keypoints reordered to the model keypoints
        contacts.txt           estimated contact sequence (2 cm rule)
        truth.txt              ground-truth contacts, when available
        feasibility.json       per-timestep verdicts
        metrics.json           metric report
        diagnostics.json       planner or IK diagnostics
    OUT/<method>/aggregate.json
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import io
from .cem_mpc import CemConfig, plan_receding_horizon, profile
from .dynamics import DynamicsConfig, Trajectory
from .feasibility import (ContactSequence, FeasibilityTolerances, check_trajectory_feasibility)
from .fixtures import FIXTURES, fixture_dir
from .kinematics import (IkOptions, KeypointTrajectory, align_reference, fk_trajectory,
                         geometric_retarget_with_diagnostics, place_on_ground)
from .metrics import MetricsReport, aggregate_seeds, evaluate
from .model import REFERENCE_MODELS, RobotModel, load_model_file, reference_model
from .retarget_cost import CostWeights, build_laplacian, combined_distance

log = logging.getLogger(__name__)

METHODS = ("gr", "idr", "ddr")


class PipelineError(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    model: str
    reference: str
    method: str = "ddr"
    seeds: list[int] = field(default_factory=lambda: [0])
    weights: CostWeights = CostWeights()
    cem: CemConfig = field(default_factory=lambda: profile("fast"))
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    contact_threshold: float = 0.02
    tolerances: FeasibilityTolerances = FeasibilityTolerances()
    out: str = "runs"
    truth: str | None = None
    clean: str | None = None
    keypoint_map: dict[str, str] | None = None
    ik: IkOptions = field(default_factory=IkOptions)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.seeds:
            raise ValueError("at least one seed required")
        if not self.model or not self.reference or not self.out:
            raise ValueError("model, reference and out must be non-empty")

    def settings(self) -> dict[str, Any]:
        """Everything that determines the result, as plain JSON data."""
        return {
            "model": self.model, "reference": self.reference, "method": self.method,
            "weights": dataclasses.asdict(self.weights),
            "cem": dataclasses.asdict(self.cem) if self.method != "gr" else None,
            "dynamics": _plain(dataclasses.asdict(self.dynamics)),
            "contact_threshold": self.contact_threshold,
            "tolerances": dataclasses.asdict(self.tolerances),
            "keypoint_map": self.keypoint_map,
            "ik": _plain({k: v for k, v in dataclasses.asdict(self.ik).items() if k != "initial"}),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class RunArtifacts:
    directory: Path
    run_id: str
    seed: int
    method: str
    trajectory: Trajectory
    keypoints: KeypointTrajectory
    contacts: ContactSequence
    feasibility: Any
    metrics: MetricsReport
    diagnostics: dict


# --------------------------------------------------------------------------
# inputs


def resolve_model(spec: str) -> RobotModel:
    p = Path(spec)
    if p.is_file():
        return load_model_file(p)
    if spec in REFERENCE_MODELS:
        return reference_model(spec)
    raise FileNotFoundError(f"model file not found: {spec}")


def resolve_reference(spec: str) -> tuple[Path, Path | None, Path | None]:
    """Keypoint file path plus the truth labels and clean motion shipped with a fixture."""
    p = Path(spec)
    if p.is_file():
        return p, None, None
    if spec in FIXTURES:
        d = fixture_dir()
        return d / f"{spec}.keypoints.txt", d / f"{spec}.contacts.txt", d / f"{spec}.clean.txt"
    raise FileNotFoundError(f"reference file not found: {spec}")


def _run_id(settings: dict, seed: int) -> str:
    digest = hashlib.sha1(json.dumps(settings, sort_keys=True).encode()).hexdigest()[:10]
    return f"{settings['method']}-{seed}-{digest}"


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=True) + "\n")


# --------------------------------------------------------------------------
# run


def initial_stance(model: RobotModel, frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Default stance under the reference pelvis, lowest contact point on the ground."""
    q = model.neutral_configuration()
    if "pelvis" in model.keypoint_names:
        k = model.keypoint_index("pelvis")
        if mask[k]:
            q[0:2] = frames[0, k, :2]
    return place_on_ground(model, q)


def retarget(config: PipelineConfig, model: RobotModel, x_ref: KeypointTrajectory, seed: int,
             gr: Trajectory | None = None):
    """Return (trajectory, diagnostics dict) for one method and seed."""
    L = build_laplacian(model.keypoint_adjacency, model.m)
    ik = dataclasses.replace(config.ik, keypoint_map=config.keypoint_map, w_p=config.weights.w_p,
                             w_l=config.weights.w_l, keypoint_weights=config.weights.keypoint_weights)
    if gr is None and config.method in ("gr", "idr"):
        gr, ik_diag = geometric_retarget_with_diagnostics(model, x_ref, ik)
        if config.method == "gr":
            return gr, {"ik_costs": ik_diag.costs, "ik_iterations": ik_diag.iterations}
    cem = dataclasses.replace(config.cem, seed=seed)
    frames, mask = align_reference(model, x_ref, config.keypoint_map)
    if config.method == "idr":
        target = fk_trajectory(model, gr)
        q0 = place_on_ground(model, gr.q[0])
        kmap = None
    else:
        target = x_ref
        q0 = initial_stance(model, frames, mask)
        kmap = config.keypoint_map
    Q, U, diag = plan_receding_horizon(model, target, q0, L, config.weights, cem, config.dynamics,
                                       keypoint_map=kmap)
    return Q, {
        "best_costs": diag.best_costs, "elite_mean_costs": diag.elite_mean_costs,
        "std_norms": diag.std_norms, "replan_steps": diag.replan_steps,
        "rollouts": diag.rollouts, "wall_time": diag.wall_time, "controls": U.controls,
    }


def run(config: PipelineConfig) -> list[RunArtifacts]:
    """Retarget, evaluate and write one artifact set per seed (GR: a single set)."""
    model = resolve_model(config.model)
    ref_path, truth_path, clean_path = resolve_reference(config.reference)
    truth_path = Path(config.truth) if config.truth else truth_path
    clean_path = Path(config.clean) if config.clean else clean_path
    x_ref = io.read_keypoints(ref_path)
    if abs(x_ref.dt - config.dynamics.control_dt) > 1e-12 and config.method != "gr":
        raise PipelineError(f"reference dt {x_ref.dt} differs from control dt {config.dynamics.control_dt}")
    truth = io.read_contacts(truth_path) if truth_path else None
    if truth is not None and truth.flags.shape != (x_ref.T, len(model.contact_groups)):
        raise PipelineError("truth labels do not match the reference length or contact groups")
    frames, mask = align_reference(model, x_ref, config.keypoint_map)
    aligned = KeypointTrajectory(frames, x_ref.dt, list(model.keypoint_adjacency), model.keypoint_names)
    L = build_laplacian(model.keypoint_adjacency, model.m)

    seeds = list(config.seeds)
    if config.method == "gr" and len(seeds) > 1:
        log.warning("GR is deterministic; ignoring seeds %s", seeds[1:])
    if config.method == "gr":
        seeds = seeds[:1]

    gr = None
    q_ref = None
    if clean_path is not None:
        q_ref, _ = io.read_trajectory(clean_path)
    if config.method == "idr" or q_ref is None:
        ik = dataclasses.replace(config.ik, keypoint_map=config.keypoint_map, w_p=config.weights.w_p,
                                 w_l=config.weights.w_l, keypoint_weights=config.weights.keypoint_weights)
        gr, _ = geometric_retarget_with_diagnostics(model, x_ref, ik)
        if q_ref is None:
            q_ref = gr

    settings = config.settings()
    method_dir = Path(config.out) / config.method
    results = []
    for seed in seeds:
        run_id = _run_id(settings, seed)
        Q, diag = retarget(config, model, x_ref, seed, gr if config.method == "idr" else None)
        x = fk_trajectory(model, Q)
        feas = check_trajectory_feasibility(model, Q, threshold=config.contact_threshold, tol=config.tolerances)
        distance = combined_distance(x, aligned, L, config.weights)
        metrics = evaluate(model, Q, q_ref, aligned, L, truth, feas.contacts, feas.infeasible_fraction,
                           x=x, distance=distance)
        d = method_dir / f"seed-{seed}"
        d.mkdir(parents=True, exist_ok=True)
        meta = {"run_id": run_id, "seed": seed}
        io.write_trajectory(d / "trajectory.txt", Trajectory(Q.q, None, Q.dt), model.name, **meta)
        io.write_keypoints(d / "keypoints.txt", x, **meta)
        io.write_keypoints(d / "reference.txt", aligned, **meta)
        io.write_contacts(d / "contacts.txt", feas.contacts, **meta)
        if truth is not None:
            io.write_contacts(d / "truth.txt", truth, **meta)
        _json_dump(d / "feasibility.json", {
            **meta, "eps_dyn": feas.eps_dyn, "infeasible_fraction": feas.infeasible_fraction,
            "indeterminate": feas.indeterminate_count, "worst_residual": feas.worst[0],
            "worst_timestep": feas.worst[1], "feasible": feas.feasible, "residuals": feas.residuals,
        })
        _json_dump(d / "metrics.json", {**meta, **metrics.to_dict()})
        _json_dump(d / "diagnostics.json", {**meta, **diag})
        _json_dump(d / "run.json", {**meta, "method": config.method, "model_name": model.name,
                                    "settings": settings})
        results.append(RunArtifacts(d, run_id, seed, config.method, Q, x, feas.contacts, feas, metrics, diag))
        log.info("%s seed %d: infeasible %.1f%%, distance %.4f", config.method, seed,
                 100 * feas.infeasible_fraction, distance)
    agg = aggregate_seeds([r.metrics for r in results])
    _json_dump(method_dir / "aggregate.json", {"method": config.method, "model_name": model.name,
                                               "seeds": seeds, **agg.to_dict()})
    return results


# --------------------------------------------------------------------------
# report


def find_runs(paths) -> list[Path]:
    """Run directories (those holding run.json) under the given paths."""
    found = []
    for p in map(Path, paths):
        if (p / "run.json").is_file():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(q.parent for q in p.rglob("run.json")))
        else:
            raise FileNotFoundError(f"no run artifacts at {p}")
    if not found:
        raise FileNotFoundError(f"no run artifacts under {', '.join(map(str, paths))}")
    return found


def _load_metrics(d: Path) -> MetricsReport:
    path = d / "metrics.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing artifact {path}")
    data = json.loads(path.read_text())
    names = {f.name for f in dataclasses.fields(MetricsReport)}
    return MetricsReport(**{k: v for k, v in data.items() if k in names})


def report(paths) -> dict:
    """Per-method aggregates recomputed from the per-seed artifacts."""
    runs = find_runs(paths)
    by_method: dict[str, list[tuple[int, MetricsReport]]] = {}
    models = set()
    for d in runs:
        info = json.loads((d / "run.json").read_text())
        models.add(info["model_name"])
        by_method.setdefault(info["method"], []).append((info["seed"], _load_metrics(d)))
    if len(models) > 1:
        raise PipelineError(f"runs use different models: {sorted(models)}")
    rows = {}
    for method in sorted(by_method, key=lambda m: METHODS.index(m) if m in METHODS else 99):
        entries = sorted(by_method[method], key=lambda e: e[0])
        agg = aggregate_seeds([m for _, m in entries])
        rows[method] = {"seeds": [s for s, _ in entries], **agg.to_dict()}
    return {"model_name": models.pop(), "methods": rows}


def format_report(rep: dict) -> str:
    cols = [("infeasible %", "infeasible_fraction", 100.0), ("contact err %", "contact_error_rate", 100.0),
            ("joint RMSE", "joints_rmse", 1.0), ("pos err [m]", "mean_position_error", 1.0),
            ("lap err [m]", "mean_laplacian_error", 1.0), ("slip [m]", "foot_slip", 1.0),
            ("distance", "distance_to_reference", 1.0)]
    head = f"{'method':<8}{'n':>3}{'success %':>11}" + "".join(f"{c[0]:>22}" for c in cols)
    lines = [f"model: {rep['model_name']}", head, "-" * len(head)]
    for method, row in rep["methods"].items():
        cells = []
        for _, key, scale in cols:
            m, s = row["mean"][key], row["std"][key]
            cells.append("n/a" if math.isnan(m) else f"{scale * m:.4g} +/- {scale * s:.2g}")
        lines.append(f"{method:<8}{row['n']:>3}{100 * row['success_rate']:>11.1f}"
                     + "".join(f"{c:>22}" for c in cells))
    return "\n".join(lines)
