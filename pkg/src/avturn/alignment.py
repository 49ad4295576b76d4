"""Gromov-Wasserstein alignment of two point clouds via random 1-D slices.

For uniform weights and squared-distance costs, the optimal 1-D coupling is
one of two monotone assignments between the sorted samples (ascending with
ascending, or ascending with descending), so each slice has a closed form.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

BRUTE_FORCE_MAX_N = 8


@dataclass
class PointCloud:
    points: np.ndarray  # (n, d), uniform weights

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 2:
            raise ValueError(f"point cloud needs shape (n>=2, d), got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud has non-finite coordinates")


def coupling_cost(x: np.ndarray, y: np.ndarray) -> float:
    """J for the coupling x[i] <-> y[i]: mean over (i, j) of (|x_i-x_j|^2 - |y_i-y_j|^2)^2."""
    cx = (x[:, None] - x[None, :]) ** 2
    cy = (y[:, None] - y[None, :]) ** 2
    return float(((cx - cy) ** 2).sum() / len(x) ** 2)


def gw_1d(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"gw_1d needs equal-length 1-D samples, got {x.shape} and {y.shape}")
    xs, ys = np.sort(x), np.sort(y)
    return min(coupling_cost(xs, ys), coupling_cost(xs, ys[::-1]))


def brute_force_gw_1d(x, y) -> float:
    """Exact minimum of J over all n! permutations (n <= 8)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length 1-D samples, got {x.shape} and {y.shape}")
    if len(x) > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {len(x)}")
    return min(coupling_cost(x, y[list(p)]) for p in itertools.permutations(range(len(x))))


def random_directions(d: int, n_proj: int, seed: int) -> np.ndarray:
    """(d, L) unit vectors drawn uniformly on the sphere."""
    if n_proj <= 0:
        raise ValueError(f"number of projections must be positive, got {n_proj}")
    theta = np.random.default_rng(seed).normal(size=(d, n_proj))
    return theta / np.linalg.norm(theta, axis=0, keepdims=True)


def _pair_difference_matrix(n: int) -> np.ndarray:
    """(n*n, n) matrix D with (D x)[i*n + j] = x_i - x_j."""
    D = np.zeros((n * n, n))
    idx = np.arange(n)
    rows = (idx[:, None] * n + idx[None, :]).ravel()
    D[rows, np.repeat(idx, n)] += 1.0
    D[rows, np.tile(idx, n)] -= 1.0
    return D


def sliced_gw(z_v, z_a, n_proj: int = 64, seed: int = 0) -> Tensor:
    """Mean over random directions of the closed-form 1-D GW cost.

    Both inputs are (n, d) tensors (or arrays). Couplings are chosen on the
    forward values and held fixed, so gradients flow through the sorted
    projections only.
    """
    z_v, z_a = T.as_tensor(z_v), T.as_tensor(z_a)
    if z_v.ndim != 2 or z_a.ndim != 2 or z_v.shape[1] != z_a.shape[1]:
        raise T.ShapeError("sliced_gw (ambient dims)", z_v.shape, z_a.shape)
    if z_v.shape[0] != z_a.shape[0]:
        raise T.ShapeError("sliced_gw (point counts)", z_v.shape, z_a.shape)
    n, d = z_v.shape
    theta = T.Tensor(random_directions(d, n_proj, seed))
    xs, _ = T.sort_with_permutation(z_v @ theta, axis=0)  # (n, L)
    ys, _ = T.sort_with_permutation(z_a @ theta, axis=0)
    D = T.Tensor(_pair_difference_matrix(n))
    cx = (D @ xs) ** 2
    cy_id = (D @ ys) ** 2
    cy_anti = (D @ ys[::-1]) ** 2
    j_id = ((cx - cy_id) ** 2).sum(axis=0) * (1.0 / n ** 2)  # (L,)
    j_anti = ((cx - cy_anti) ** 2).sum(axis=0) * (1.0 / n ** 2)
    pick = (j_id.data <= j_anti.data).astype(np.float64)
    per_slice = j_id * pick + j_anti * (1.0 - pick)
    return per_slice.mean()
