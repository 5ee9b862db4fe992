"""Task-space distance between keypoint trajectories.

Two terms are combined: a weighted squared Euclidean term over all keypoints
and frames, and a shape term that applies the skeleton graph Laplacian to
the per-keypoint differences, normalized by the number of keypoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class CostWeights:
    w_p: float = 1.0
    w_l: float = 1.0
    keypoint_weights: Sequence[float] | None = None

    def __post_init__(self):
        if self.w_p < 0 or self.w_l < 0:
            raise ValueError("cost weights must be non-negative")
        if self.w_p == 0 and self.w_l == 0:
            raise ValueError("w_p and w_l cannot both be zero")
        if self.keypoint_weights is not None and np.any(np.asarray(self.keypoint_weights) < 0):
            raise ValueError("per-keypoint weights must be non-negative")


def build_laplacian(adjacency: Iterable[tuple[int, int]], m: int) -> np.ndarray:
    """Unit-weight graph Laplacian D - A over ``m`` keypoints."""
    L = np.zeros((m, m))
    for a, b in adjacency:
        if not (0 <= a < m and 0 <= b < m):
            raise ValueError(f"edge ({a}, {b}) out of range for {m} keypoints")
        if a == b:
            raise ValueError(f"self-loop at keypoint {a}")
        if L[a, b] != 0:
            continue
        L[a, b] = L[b, a] = -1.0
        L[a, a] += 1.0
        L[b, b] += 1.0
    return L


def _frames(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "frames", x), dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected keypoint frames of shape (T, m, 3), got {arr.shape}")
    return arr


def _diff(x, x_tilde) -> np.ndarray:
    a, b = _frames(x), _frames(x_tilde)
    if a.shape != b.shape:
        raise ValueError(f"keypoint trajectory shapes differ: {a.shape} vs {b.shape}")
    return a - b


def spatial_cost(x, x_tilde, keypoint_weights: Sequence[float] | None = None) -> float:
    """Sum over frames and keypoints of w_k * ||p - p~||^2."""
    d = _diff(x, x_tilde)
    sq = np.einsum("tkc,tkc->tk", d, d)
    if keypoint_weights is not None:
        w = np.asarray(keypoint_weights, dtype=float)
        if w.shape != (d.shape[1],):
            raise ValueError("per-keypoint weights must have one entry per keypoint")
        sq = sq * w
    return float(sq.sum())


def _check_laplacian(L: np.ndarray, m: int) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    if L.shape != (m, m):
        raise ValueError(f"Laplacian is {L.shape}, expected ({m}, {m})")
    return L


def laplacian_residuals(x, x_tilde, L: np.ndarray) -> np.ndarray:
    """(T, m, 3) array of L applied per coordinate channel to the frame differences."""
    d = _diff(x, x_tilde)
    L = _check_laplacian(L, d.shape[1])
    return np.einsum("jk,tkc->tjc", L, d)


def laplacian_cost(x, x_tilde, L: np.ndarray) -> float:
    r = laplacian_residuals(x, x_tilde, L)
    return float(np.sum(r * r) / r.shape[1])


def combined_distance(x, x_tilde, L: np.ndarray, weights: CostWeights = CostWeights()) -> float:
    """w_p * spatial + w_l * shape; the objective shared by the IK and the planner."""
    total = 0.0
    if weights.w_p:
        total += weights.w_p * spatial_cost(x, x_tilde, weights.keypoint_weights)
    if weights.w_l:
        total += weights.w_l * laplacian_cost(x, x_tilde, L)
    return total


def laplacian_errors(x, x_tilde, L: np.ndarray) -> np.ndarray:
    """(T, m) per-frame, per-keypoint norms of the Laplacian residual, in meters."""
    return np.linalg.norm(laplacian_residuals(x, x_tilde, L), axis=2)


def per_keypoint_laplacian_error(x, x_tilde, L: np.ndarray, t: int, k: int) -> float:
    d = _diff(x, x_tilde)
    T, m = d.shape[:2]
    if not (0 <= t < T and 0 <= k < m):
        raise IndexError(f"(t={t}, k={k}) outside {T} frames x {m} keypoints")
    L = _check_laplacian(L, m)
    return float(np.linalg.norm(L[k] @ d[t]))
