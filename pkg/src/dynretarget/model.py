"""Robot description: kinematic tree, inertias, limits, keypoints and contact sites."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Any, NamedTuple, Sequence

import numpy as np

BASE_JOINTS = ("floating", "fixed", "planar")

# Which of the six base velocity coordinates (vx, vy, vz, wx, wy, wz) move.
_BASE_DOFS = {
    "floating": (0, 1, 2, 3, 4, 5),
    "fixed": (),
    "planar": (0, 2, 4),
}


class ModelError(ValueError):
    pass


class ModelParseError(ModelError):
    pass


class ModelInvariantError(ModelError):
    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid robot model: " + "; ".join(self.violations))


@dataclass(frozen=True)
class Link:
    name: str
    parent: int
    joint: str
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_quat: np.ndarray
    mass: float
    com: np.ndarray
    inertia: np.ndarray


@dataclass(frozen=True)
class JointLimit:
    name: str
    link: int
    lower: float
    upper: float
    velocity: float
    effort: float


@dataclass(frozen=True)
class Keypoint:
    name: str
    link: int
    offset: np.ndarray


@dataclass(frozen=True)
class ContactPoint:
    name: str
    link: int
    offset: np.ndarray
    group: str


class ModelArrays(NamedTuple):
    parent: np.ndarray
    axis: np.ndarray
    trans: np.ndarray
    rot: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    gravity: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    effort: np.ndarray
    free_idx: np.ndarray
    clinks: np.ndarray
    coffsets: np.ndarray
    klinks: np.ndarray
    koffsets: np.ndarray


@dataclass(frozen=True)
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class RobotModel:
    name: str
    links: tuple[Link, ...]
    joint_limits: tuple[JointLimit, ...]
    keypoints: tuple[Keypoint, ...]
    keypoint_adjacency: tuple[tuple[int, int], ...]
    contact_points: tuple[ContactPoint, ...]
    friction_coefficient: float
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    @property
    def n_q(self) -> int:
        return len(self.links) - 1

    @property
    def nq_config(self) -> int:
        return 7 + self.n_q

    @property
    def nv(self) -> int:
        return 6 + self.n_q

    @property
    def m(self) -> int:
        return len(self.keypoints)

    @property
    def base_joint(self) -> str:
        return self.links[0].joint

    @cached_property
    def free_dofs(self) -> np.ndarray:
        """Indices of velocity coordinates that are not held by a base constraint."""
        base = list(_BASE_DOFS.get(self.base_joint, ()))
        return np.array(base + list(range(6, self.nv)), dtype=np.int64)

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    @property
    def weight(self) -> float:
        return self.total_mass * float(np.linalg.norm(self.gravity))

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joint_limits]

    @property
    def keypoint_names(self) -> list[str]:
        return [k.name for k in self.keypoints]

    @cached_property
    def contact_groups(self) -> dict[str, list[int]]:
        groups: dict[str, list[int]] = {}
        for i, c in enumerate(self.contact_points):
            groups.setdefault(c.group, []).append(i)
        return groups

    @property
    def group_names(self) -> list[str]:
        return list(self.contact_groups)

    def keypoint_index(self, name: str) -> int:
        for i, k in enumerate(self.keypoints):
            if k.name == name:
                return i
        raise KeyError(f"model {self.name!r} has no keypoint {name!r}")

    @cached_property
    def arrays(self) -> ModelArrays:
        """Packed arrays consumed by the compiled kernels."""
        nl = len(self.links)
        rot = np.empty((nl, 3, 3))
        for i, link in enumerate(self.links):
            rot[i] = _quat_to_rot(link.origin_quat)
        lim = self.joint_limits
        return ModelArrays(
            parent=np.array([l.parent for l in self.links], dtype=np.int64),
            axis=np.array([l.axis for l in self.links], dtype=float).reshape(nl, 3),
            trans=np.array([l.origin_xyz for l in self.links], dtype=float).reshape(nl, 3),
            rot=rot,
            mass=np.array([l.mass for l in self.links], dtype=float),
            com=np.array([l.com for l in self.links], dtype=float).reshape(nl, 3),
            inertia=np.array([l.inertia for l in self.links], dtype=float).reshape(nl, 3, 3),
            gravity=np.asarray(self.gravity, dtype=float),
            lower=np.array([j.lower for j in lim], dtype=float),
            upper=np.array([j.upper for j in lim], dtype=float),
            effort=np.array([j.effort for j in lim], dtype=float),
            free_idx=self.free_dofs,
            clinks=np.array([c.link for c in self.contact_points], dtype=np.int64),
            coffsets=np.array([c.offset for c in self.contact_points], dtype=float).reshape(-1, 3),
            klinks=np.array([k.link for k in self.keypoints], dtype=np.int64),
            koffsets=np.array([k.offset for k in self.keypoints], dtype=float).reshape(-1, 3),
        )

    def neutral_configuration(self) -> np.ndarray:
        """Base at the origin, identity orientation, joints at zero clipped into limits."""
        q = np.zeros(self.nq_config)
        q[3] = 1.0
        q[7:] = np.clip(0.0, self.arrays.lower, self.arrays.upper)
        return q


def _quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


# --------------------------------------------------------------------------
# validation


def validate_model(model: RobotModel) -> ValidationReport:
    """List every violated invariant; an empty list means the model is valid."""
    out: list[str] = []
    nl = len(model.links)
    if nl == 0:
        return ValidationReport(["model has no links"])
    if model.links[0].parent != -1 or model.links[0].joint not in BASE_JOINTS:
        out.append("tree structure: link 0 must be the base (parent -1, joint floating|fixed|planar)")
    for i, link in enumerate(model.links[1:], start=1):
        if not 0 <= link.parent < i:
            out.append(f"tree structure: link {i} ({link.name}) has parent {link.parent} >= own index")
        if link.joint != "revolute":
            out.append(f"joint type: link {i} ({link.name}) must be revolute, got {link.joint!r}")
        if abs(np.linalg.norm(link.axis) - 1.0) > 1e-9:
            out.append(f"joint axis: link {i} ({link.name}) axis is not a unit vector")
    for i, link in enumerate(model.links):
        if not link.mass > 0:
            out.append(f"mass not positive: link {i} ({link.name})")
        I = np.asarray(link.inertia)
        if I.shape != (3, 3) or not np.all(np.isfinite(I)):
            out.append(f"inertia not SPD: link {i} ({link.name}) malformed")
        elif np.max(np.abs(I - I.T)) > 1e-12 or np.min(np.linalg.eigvalsh(0.5 * (I + I.T))) <= 0:
            out.append(f"inertia not SPD: link {i} ({link.name})")
        if abs(np.linalg.norm(link.origin_quat) - 1.0) > 1e-9:
            out.append(f"origin quaternion not unit: link {i} ({link.name})")
    if len(model.joint_limits) != nl - 1:
        out.append(f"joint count: {len(model.joint_limits)} joint entries for {nl - 1} revolute links")
    for j, lim in enumerate(model.joint_limits):
        if lim.link != j + 1:
            out.append(f"joint order: joint {j} ({lim.name}) must drive link {j + 1}, got {lim.link}")
        if not lim.lower < lim.upper:
            out.append(f"joint limits: joint {j} ({lim.name}) lower >= upper")
        if not lim.velocity > 0:
            out.append(f"velocity limit not positive: joint {j} ({lim.name})")
        if not lim.effort > 0:
            out.append(f"torque limit not positive: joint {j} ({lim.name})")
    for i, k in enumerate(model.keypoints):
        if not 0 <= k.link < nl:
            out.append(f"invalid link index: keypoint {i} ({k.name}) -> {k.link}")
    for i, c in enumerate(model.contact_points):
        if not 0 <= c.link < nl:
            out.append(f"invalid link index: contact {i} ({c.name}) -> {c.link}")
    m = len(model.keypoints)
    seen: set[tuple[int, int]] = set()
    for a, b in model.keypoint_adjacency:
        if not (0 <= a < m and 0 <= b < m):
            out.append(f"invalid adjacency index: edge ({a}, {b})")
            continue
        if a == b:
            out.append(f"self-loop: edge ({a}, {b})")
            continue
        key = (min(a, b), max(a, b))
        if key in seen:
            out.append(f"duplicate edge: ({a}, {b})")
        seen.add(key)
    if not model.friction_coefficient > 0:
        out.append("friction coefficient not positive")
    g = np.asarray(model.gravity)
    if g.shape != (3,) or not np.all(np.isfinite(g)):
        out.append("gravity must be a finite 3-vector")
    return ValidationReport(out)


# --------------------------------------------------------------------------
# document parsing


def _num(obj: Any, where: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ModelParseError(f"{where}: expected a number, got {obj!r}")
    return float(obj)


def _vec(obj: Any, n: int, where: str) -> np.ndarray:
    if not isinstance(obj, list) or len(obj) != n:
        raise ModelParseError(f"{where}: expected a list of {n} numbers, got {obj!r}")
    return np.array([_num(x, f"{where}[{i}]") for i, x in enumerate(obj)])


def _int(obj: Any, where: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ModelParseError(f"{where}: expected an integer, got {obj!r}")
    return obj


def _get(d: dict, key: str, where: str, default: Any = ...) -> Any:
    if not isinstance(d, dict):
        raise ModelParseError(f"{where}: expected an object")
    if key not in d:
        if default is ...:
            raise ModelParseError(f"{where}: missing field {key!r}")
        return default
    return d[key]


def _link_ref(obj: Any, names: dict[str, int], where: str) -> int:
    if isinstance(obj, str):
        if obj not in names:
            raise ModelParseError(f"{where}: unknown link {obj!r}")
        return names[obj]
    return _int(obj, where)


def _inertia(obj: Any, where: str) -> np.ndarray:
    # accepts a 3x3 matrix or the 6 unique entries [ixx, iyy, izz, ixy, ixz, iyz]
    if isinstance(obj, list) and len(obj) == 6 and not isinstance(obj[0], list):
        ixx, iyy, izz, ixy, ixz, iyz = _vec(obj, 6, where)
        return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    if not isinstance(obj, list) or len(obj) != 3:
        raise ModelParseError(f"{where}: expected a 3x3 matrix or 6 entries")
    return np.array([_vec(r, 3, f"{where}[{i}]") for i, r in enumerate(obj)])


def model_from_dict(doc: dict, check: bool = True) -> RobotModel:
    if not isinstance(doc, dict):
        raise ModelParseError("model document must be an object")
    name = _get(doc, "name", "model")
    if not isinstance(name, str):
        raise ModelParseError("name: expected a string")
    raw_links = _get(doc, "links", "model")
    if not isinstance(raw_links, list):
        raise ModelParseError("links: expected a list")
    names = {}
    for i, l in enumerate(raw_links):
        names[_get(l, "name", f"links[{i}]")] = i

    links = []
    for i, l in enumerate(raw_links):
        w = f"links[{i}]"
        parent = _get(l, "parent", w)
        parent = -1 if parent is None else _link_ref(parent, names, f"{w}.parent")
        joint = _get(l, "joint", w, "floating" if i == 0 else "revolute")
        axis = _vec(_get(l, "axis", w, [0.0, 0.0, 1.0]), 3, f"{w}.axis")
        n = np.linalg.norm(axis)
        if n > 0:
            axis = axis / n
        origin = _get(l, "origin", w, {})
        xyz = _vec(_get(origin, "xyz", f"{w}.origin", [0.0, 0.0, 0.0]), 3, f"{w}.origin.xyz")
        quat = _vec(_get(origin, "quat", f"{w}.origin", [1.0, 0.0, 0.0, 0.0]), 4, f"{w}.origin.quat")
        qn = np.linalg.norm(quat)
        if qn == 0:
            raise ModelParseError(f"{w}.origin.quat: zero quaternion")
        links.append(
            Link(
                name=l["name"],
                parent=parent,
                joint=joint,
                axis=axis,
                origin_xyz=xyz,
                origin_quat=quat / qn,
                mass=_num(_get(l, "mass", w), f"{w}.mass"),
                com=_vec(_get(l, "com", w, [0.0, 0.0, 0.0]), 3, f"{w}.com"),
                inertia=_inertia(_get(l, "inertia", w), f"{w}.inertia"),
            )
        )

    joints = []
    for j, jd in enumerate(_get(doc, "joints", "model", [])):
        w = f"joints[{j}]"
        joints.append(
            JointLimit(
                name=_get(jd, "name", w),
                link=_link_ref(_get(jd, "link", w), names, f"{w}.link"),
                lower=_num(_get(jd, "lower", w), f"{w}.lower"),
                upper=_num(_get(jd, "upper", w), f"{w}.upper"),
                velocity=_num(_get(jd, "velocity", w), f"{w}.velocity"),
                effort=_num(_get(jd, "effort", w), f"{w}.effort"),
            )
        )

    keypoints = []
    for k, kd in enumerate(_get(doc, "keypoints", "model", [])):
        w = f"keypoints[{k}]"
        keypoints.append(
            Keypoint(
                name=_get(kd, "name", w),
                link=_link_ref(_get(kd, "link", w), names, f"{w}.link"),
                offset=_vec(_get(kd, "offset", w, [0.0, 0.0, 0.0]), 3, f"{w}.offset"),
            )
        )
    kp_names = {k.name: i for i, k in enumerate(keypoints)}

    adjacency = []
    for e, edge in enumerate(_get(doc, "adjacency", "model", [])):
        w = f"adjacency[{e}]"
        if not isinstance(edge, list) or len(edge) != 2:
            raise ModelParseError(f"{w}: expected a pair")
        pair = []
        for x in edge:
            if isinstance(x, str):
                if x not in kp_names:
                    raise ModelParseError(f"{w}: unknown keypoint {x!r}")
                pair.append(kp_names[x])
            else:
                pair.append(_int(x, w))
        adjacency.append((pair[0], pair[1]))

    contacts = []
    for c, cd in enumerate(_get(doc, "contacts", "model", [])):
        w = f"contacts[{c}]"
        contacts.append(
            ContactPoint(
                name=_get(cd, "name", w),
                link=_link_ref(_get(cd, "link", w), names, f"{w}.link"),
                offset=_vec(_get(cd, "offset", w, [0.0, 0.0, 0.0]), 3, f"{w}.offset"),
                group=str(_get(cd, "group", w)),
            )
        )

    model = RobotModel(
        name=name,
        links=tuple(links),
        joint_limits=tuple(joints),
        keypoints=tuple(keypoints),
        keypoint_adjacency=tuple(adjacency),
        contact_points=tuple(contacts),
        friction_coefficient=_num(_get(doc, "friction", "model"), "friction"),
        gravity=_vec(_get(doc, "gravity", "model", [0.0, 0.0, -9.81]), 3, "gravity"),
    )
    if check:
        report = validate_model(model)
        if report.violations:
            raise ModelInvariantError(report.violations)
    return model


def load_model(text: str) -> RobotModel:
    """Parse a model document (JSON text) and check every invariant."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return model_from_dict(doc)


def load_model_file(path) -> RobotModel:
    with open(path, encoding="utf-8") as fh:
        return load_model(fh.read())


def model_to_dict(model: RobotModel) -> dict:
    def lst(a):
        return [float(x) for x in np.asarray(a).ravel()]

    return {
        "name": model.name,
        "gravity": lst(model.gravity),
        "friction": float(model.friction_coefficient),
        "links": [
            {
                "name": l.name,
                "parent": l.parent,
                "joint": l.joint,
                "axis": lst(l.axis),
                "origin": {"xyz": lst(l.origin_xyz), "quat": lst(l.origin_quat)},
                "mass": float(l.mass),
                "com": lst(l.com),
                "inertia": [lst(r) for r in np.asarray(l.inertia)],
            }
            for l in model.links
        ],
        "joints": [
            {
                "name": j.name,
                "link": j.link,
                "lower": j.lower,
                "upper": j.upper,
                "velocity": j.velocity,
                "effort": j.effort,
            }
            for j in model.joint_limits
        ],
        "keypoints": [{"name": k.name, "link": k.link, "offset": lst(k.offset)} for k in model.keypoints],
        "adjacency": [list(e) for e in model.keypoint_adjacency],
        "contacts": [
            {"name": c.name, "link": c.link, "offset": lst(c.offset), "group": c.group}
            for c in model.contact_points
        ],
    }


def dump_model(model: RobotModel) -> str:
    return json.dumps(model_to_dict(model), indent=2)


REFERENCE_MODELS = ("planar-biped", "mini-humanoid")


def reference_model(name: str) -> RobotModel:
    """One of the shipped reference models."""
    if name not in REFERENCE_MODELS:
        raise KeyError(f"unknown reference model {name!r}; choose from {REFERENCE_MODELS}")
    text = resources.files("dynretarget.data").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return load_model(text)
