"""Plain-text formats for keypoint, trajectory and contact files.

Every file is a header of ``key: value`` lines, a ``---`` separator, then one
whitespace-separated row per frame. Floats are written with 17 significant
digits so a write/read cycle is exact.
"""

from __future__ import annotations

import io as _io
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .feasibility import ContactSequence
from .kinematics import KeypointTrajectory

FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    pass


def _format_rows(rows: np.ndarray, fmt: str = FLOAT_FMT) -> str:
    buf = _io.StringIO()
    np.savetxt(buf, np.atleast_2d(rows), fmt=fmt)
    return buf.getvalue()


def _split(text: str, where: str) -> tuple[dict[str, str], list[str]]:
    lines = text.splitlines()
    try:
        sep = lines.index("---")
    except ValueError:
        raise FormatError(f"{where}: missing '---' separator after the header") from None
    header = {}
    for no, line in enumerate(lines[:sep], 1):
        if not line.strip() or line.startswith("#"):
            continue
        key, colon, value = line.partition(":")
        if not colon:
            raise FormatError(f"{where}:{no}: expected 'key: value', got {line!r}")
        header[key.strip()] = value.strip()
    body = [ln for ln in lines[sep + 1:] if ln.strip()]
    return header, body


def _need(header: dict, key: str, where: str) -> str:
    if key not in header:
        raise FormatError(f"{where}: header is missing {key!r}")
    return header[key]


def _body(body: list[str], ncol: int, where: str, dtype=float) -> np.ndarray:
    if not body:
        raise FormatError(f"{where}: no data rows")
    try:
        arr = np.loadtxt(body, dtype=dtype, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{where}: bad data row ({exc})") from None
    if arr.shape[1] != ncol:
        raise FormatError(f"{where}: expected {ncol} columns per row, found {arr.shape[1]}")
    return arr


def _read(path) -> tuple[str, str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p.read_text(), str(p)


# --------------------------------------------------------------------------
# keypoints


def dumps_keypoints(x: KeypointTrajectory, **meta) -> str:
    names = x.names or [f"k{i}" for i in range(x.m)]
    head = [
        "# keypoint trajectory, world frame, meters",
        f"dt: {FLOAT_FMT % x.dt}",
        f"names: {' '.join(names)}",
        f"edges: {' '.join(f'{a}-{b}' for a, b in x.adjacency)}",
        f"frames: {x.T}",
    ]
    head += [f"{k}: {v}" for k, v in meta.items()]
    return "\n".join(head) + "\n---\n" + _format_rows(x.frames.reshape(x.T, -1))


def loads_keypoints(text: str, where: str = "<keypoints>") -> KeypointTrajectory:
    header, body = _split(text, where)
    dt = float(_need(header, "dt", where))
    names = _need(header, "names", where).split()
    edges = []
    for tok in header.get("edges", "").split():
        a, _, b = tok.partition("-")
        try:
            edges.append((int(a), int(b)))
        except ValueError:
            raise FormatError(f"{where}: bad edge {tok!r}") from None
    rows = _body(body, 3 * len(names), where)
    if "frames" in header and int(header["frames"]) != rows.shape[0]:
        raise FormatError(f"{where}: header says {header['frames']} frames, found {rows.shape[0]}")
    return KeypointTrajectory(rows.reshape(rows.shape[0], len(names), 3), dt, edges, names)


def write_keypoints(path, x: KeypointTrajectory, **meta) -> None:
    Path(path).write_text(dumps_keypoints(x, **meta))


def read_keypoints(path) -> KeypointTrajectory:
    text, where = _read(path)
    return loads_keypoints(text, where)


# --------------------------------------------------------------------------
# trajectories


def dumps_trajectory(Q: Trajectory, model_name: str, **meta) -> str:
    n_q = Q.q.shape[1] - 7
    head = ["# base position (3), base quaternion w x y z (4), joints (n_q)",
            f"model: {model_name}", f"n_q: {n_q}", f"dt: {FLOAT_FMT % Q.dt}", f"frames: {len(Q.q)}"]
    head += [f"{k}: {v}" for k, v in meta.items()]
    return "\n".join(head) + "\n---\n" + _format_rows(Q.q)


def loads_trajectory(text: str, where: str = "<trajectory>") -> tuple[Trajectory, dict[str, str]]:
    header, body = _split(text, where)
    n_q = int(_need(header, "n_q", where))
    dt = float(_need(header, "dt", where))
    rows = _body(body, 7 + n_q, where)
    return Trajectory(rows, None, dt), header


def write_trajectory(path, Q: Trajectory, model_name: str, **meta) -> None:
    Path(path).write_text(dumps_trajectory(Q, model_name, **meta))


def read_trajectory(path) -> tuple[Trajectory, dict[str, str]]:
    text, where = _read(path)
    return loads_trajectory(text, where)


# --------------------------------------------------------------------------
# contacts


def dumps_contacts(c: ContactSequence, **meta) -> str:
    head = ["# 1 = in contact", f"dt: {FLOAT_FMT % c.dt}", f"groups: {' '.join(c.groups)}", f"frames: {c.T}"]
    head += [f"{k}: {v}" for k, v in meta.items()]
    return "\n".join(head) + "\n---\n" + _format_rows(c.flags.astype(int), fmt="%d")


def loads_contacts(text: str, where: str = "<contacts>") -> ContactSequence:
    header, body = _split(text, where)
    groups = _need(header, "groups", where).split()
    rows = _body(body, len(groups), where, dtype=int)
    if np.any((rows != 0) & (rows != 1)):
        raise FormatError(f"{where}: contact flags must be 0 or 1")
    return ContactSequence(rows.astype(bool), float(header.get("dt", 0.0)), groups)


def write_contacts(path, c: ContactSequence, **meta) -> None:
    Path(path).write_text(dumps_contacts(c, **meta))


def read_contacts(path) -> ContactSequence:
    text, where = _read(path)
    return loads_contacts(text, where)
