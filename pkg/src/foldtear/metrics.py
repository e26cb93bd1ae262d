"""Point-set metrics: augmented Chamfer distance (the training loss), exact
Earth Mover's Distance on equal-size sets, and nearest-neighbor search.

The Chamfer op is differentiable: gradients flow to the argmin pairs of the
active (larger) directed term; on exact ties the reconstruction-to-input
term is chosen.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import numeric as nm
from .numeric import Tensor

EMD_SIZE_CAP = 512


def _as_cloud(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point cloud, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty point cloud")
    return arr


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, m) Euclidean distance matrix, computed exactly (no dot-product
    expansion, so coincident points give distance exactly 0)."""
    a = np.asarray(a)
    b = np.asarray(b)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _sqdist_for_argmin(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fast dot-product expansion; only used to *select* nearest pairs."""
    sq = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
          - 2.0 * (a @ b.T))
    np.maximum(sq, 0.0, out=sq)
    return sq


def _chamfer_forward(a: np.ndarray, b: np.ndarray):
    sq = _sqdist_for_argmin(a, b)
    idx_ab = sq.argmin(axis=1)
    idx_ba = sq.argmin(axis=0)
    # exact distances for the selected pairs
    d_ab = np.sqrt(np.sum((a - b[idx_ab]) ** 2, axis=1))
    d_ba = np.sqrt(np.sum((b - a[idx_ba]) ** 2, axis=1))
    term_a = d_ab.mean()
    term_b = d_ba.mean()
    # tie goes to the reconstruction-to-input branch (term_b)
    branch = "a" if term_a > term_b else "b"
    return max(term_a, term_b), branch, idx_ab, idx_ba, d_ab, d_ba


def chamfer_aug(x, y):
    """max of the two directed mean nearest-neighbor distances.

    Accepts numpy arrays (returns float) or Tensors (returns a scalar
    Tensor wired into the tape).  ``x`` is the reference cloud, ``y`` the
    reconstruction.
    """
    a = _as_cloud(x)
    b = _as_cloud(y)
    value, branch, idx_ab, idx_ba, d_ab, d_ba = _chamfer_forward(a, b)
    if not (isinstance(x, Tensor) or isinstance(y, Tensor)):
        return float(value)

    xt = x if isinstance(x, Tensor) else Tensor(a)
    yt = y if isinstance(y, Tensor) else Tensor(b)

    def bwd(g):
        g = float(g)
        if branch == "a":
            safe = d_ab > 0
            diff = (a - b[idx_ab]) / np.where(safe, d_ab, 1.0)[:, None]
            diff[~safe] = 0.0
            diff *= g / a.shape[0]
            if xt.requires_grad:
                xt.grad += diff.astype(xt.dtype)
            if yt.requires_grad:
                np.add.at(yt.grad, idx_ab, -diff.astype(yt.dtype))
        else:
            safe = d_ba > 0
            diff = (b - a[idx_ba]) / np.where(safe, d_ba, 1.0)[:, None]
            diff[~safe] = 0.0
            diff *= g / b.shape[0]
            if yt.requires_grad:
                yt.grad += diff.astype(yt.dtype)
            if xt.requires_grad:
                np.add.at(xt.grad, idx_ba, -diff.astype(xt.dtype))

    return nm.make_op(np.asarray(value, dtype=a.dtype), (xt, yt), bwd)


def emd(x, y, size_cap: int = EMD_SIZE_CAP) -> float:
    """Exact minimum mean matching cost over bijections (equal-size sets).

    Solved by the Hungarian assignment; quadratic memory and cubic time, so
    sets above ``size_cap`` are rejected.
    """
    a = _as_cloud(x)
    b = _as_cloud(y)
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"emd needs equal-size clouds, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[0] > size_cap:
        raise ValueError(
            f"emd input size {a.shape[0]} exceeds cap {size_cap}; "
            "subsample both clouds to a common size first")
    cost = pairwise_distances(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / a.shape[0])


def subsample(cloud: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded subsample without replacement (identity when already small)."""
    cloud = np.asarray(cloud)
    if cloud.shape[0] <= size:
        return cloud
    pick = rng.choice(cloud.shape[0], size=size, replace=False)
    return cloud[np.sort(pick)]


# ---------------------------------------------------------------------------
# nearest-neighbor index
# ---------------------------------------------------------------------------

class NNIndex:
    """Exact nearest-neighbor search over a fixed 3D point set.

    ``method`` picks a k-d tree or plain brute force; both return the same
    (index, distance) with ties broken toward the lowest index.
    """

    _LEAF = 16

    def __init__(self, points: np.ndarray, method: str = "kdtree"):
        self.points = _as_cloud(points).astype(np.float64)
        if method not in ("kdtree", "brute"):
            raise ValueError(f"unknown NNIndex method {method!r}")
        self.method = method
        self._root = None
        if method == "kdtree":
            self._root = self._build(np.arange(self.points.shape[0]), 0)

    def _build(self, idx: np.ndarray, depth: int):
        if idx.size <= self._LEAF:
            return ("leaf", np.sort(idx))
        axis = depth % 3
        order = np.lexsort((idx, self.points[idx, axis]))
        idx = idx[order]
        mid = idx.size // 2
        split = self.points[idx[mid], axis]
        return ("node", axis, split,
                self._build(idx[:mid], depth + 1),
                self._build(idx[mid:], depth + 1))

    def _scan(self, idx: np.ndarray, q: np.ndarray, best):
        d2 = np.sum((self.points[idx] - q) ** 2, axis=1)
        k = int(d2.argmin())
        cand = (float(d2[k]), int(idx[k]))
        return min(best, cand)

    def _search(self, node, q: np.ndarray, best):
        if node[0] == "leaf":
            return self._scan(node[1], q, best)
        _, axis, split, left, right = node
        delta = q[axis] - split
        near, far = (left, right) if delta < 0 else (right, left)
        best = self._search(near, q, best)
        if delta * delta <= best[0]:  # equal distance may hide a lower index
            best = self._search(far, q, best)
        return best

    def query(self, q) -> tuple[int, float]:
        q = np.asarray(q, dtype=np.float64).reshape(3)
        if self.method == "brute":
            d2 = np.sum((self.points - q) ** 2, axis=1)
            k = int(d2.argmin())
            return k, float(np.sqrt(d2[k]))
        d2, k = self._search(self._root, q, (np.inf, -1))
        return k, float(np.sqrt(d2))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRICS_HEADER = ["dataset", "variant", "CD", "EMD", "seed"]
METRICS_COMMENT = ("# CD is reported x100; EMD is the mean matched distance "
                   "normalized by point count, computed on seeded equal-size "
                   "subsamples")


def write_metrics_report(path, rows: list[dict]) -> None:
    """Append-style metrics CSV: dataset, variant, CD (x100), EMD, seed."""
    with open(path, "w", newline="") as fh:
        fh.write(METRICS_COMMENT + "\n")
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRICS_HEADER})


def read_metrics_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
