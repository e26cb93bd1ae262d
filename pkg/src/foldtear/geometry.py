"""The 2D primitive grid, its local graph, graph tearing, Laplacian
filtering, and the torn-graph mesh with resampling.

Everything here is a pure function over immutable inputs (safe to call from
parallel workers).  Weights are computed in float64 for reproducibility; the
Laplacian is kept dense only where a dense matrix is requested.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class GraphConfig:
    """Kernel and truncation settings for the patch graph.

    ``mode="5d"`` keeps an edge while its recomputed weight stays at or
    above ``weight_threshold``; ``mode="2d"`` keeps it while the planar
    distance stays within ``radius``.
    """

    eps: float = 0.02
    weight_threshold: float = 1e-12
    mode: str = "5d"
    radius: float | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not (0.0 < self.weight_threshold < 1.0):
            raise ValueError(
                f"weight_threshold must be in (0, 1), got {self.weight_threshold}")
        if self.mode not in ("2d", "5d"):
            raise ValueError(f"unknown graph mode {self.mode!r}")
        if self.mode == "2d" and (self.radius is None or self.radius <= 0):
            raise ValueError("2d mode requires a positive radius")


@dataclass
class SparseGraph:
    """Undirected weighted graph: edges (i, j) with i < j, weights in (0, 1]."""

    num_vertices: int
    edges: np.ndarray   # (E, 2) int64
    weights: np.ndarray  # (E,) float64

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_vertices, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}


@dataclass
class QuadMesh:
    """Quadrilateral faces over the folded grid points (indices into vertices)."""

    vertices: np.ndarray  # (m, 3)
    faces: np.ndarray     # (F, 4) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 4)


def make_grid(n: int) -> np.ndarray:
    """Regular n x n sample of [-1, 1]^2, endpoints inclusive.

    Points are ordered row-major by (row, column); spacing is 2/(n-1) on
    both axes.
    """
    if n < 2:
        raise ValueError(f"grid dimension must be >= 2, got {n}")
    axis = np.linspace(-1.0, 1.0, n)
    vv, uu = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def grid_spacing(n: int) -> float:
    return 2.0 / (n - 1)


def grid_config_2d(n: int, eps: float = 0.02) -> GraphConfig:
    """Planar-distance tearing config for an n x n grid: the radius sits
    just above the neighbor spacing, so the untorn graph is the 4-neighbor
    grid graph."""
    return GraphConfig(eps=eps, mode="2d", radius=1.05 * grid_spacing(n))


def infer_grid_dim(points: np.ndarray) -> int:
    """Grid dimension of a regular grid point set; rejects anything else."""
    points = np.asarray(points)
    n = int(round(np.sqrt(points.shape[0])))
    if n * n != points.shape[0] or n < 2 or points.shape[1] != 2:
        raise ValueError(f"not an N x N grid: {points.shape[0]} points")
    if not np.allclose(points, make_grid(n), atol=1e-9):
        raise ValueError("points do not form a regular [-1,1]^2 grid")
    return n


def grid_edges(n: int) -> np.ndarray:
    """The 4-neighbor edge list of an n x n grid: 2n(n-1) edges, i < j."""
    idx = np.arange(n * n).reshape(n, n)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.concatenate([right, down], axis=0)
    return edges[np.lexsort((edges[:, 1], edges[:, 0]))]


def gaussian_weight(sq_dist, eps: float):
    return np.exp(-np.asarray(sq_dist, dtype=np.float64) / (2.0 * eps * eps))


def eq1_weight(a, b, cfg: GraphConfig) -> float:
    """Truncated Gaussian kernel weight between two points (2D or 5D)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"point dimensions differ: {a.shape} vs {b.shape}")
    sq = float(np.sum((a - b) ** 2))
    w = float(gaussian_weight(sq, cfg.eps))
    if cfg.mode == "2d":
        return w if np.sqrt(sq) <= cfg.radius else 0.0
    return w if w >= cfg.weight_threshold else 0.0


def edge_weights(positions: np.ndarray, edges: np.ndarray,
                 cfg: GraphConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized kernel weights for an edge list; returns (weights, keep mask)."""
    positions = np.asarray(positions, dtype=np.float64)
    diff = positions[edges[:, 0]] - positions[edges[:, 1]]
    sq = np.sum(diff * diff, axis=1)
    w = gaussian_weight(sq, cfg.eps)
    if cfg.mode == "2d":
        keep = np.sqrt(sq) <= cfg.radius
    else:
        keep = w >= cfg.weight_threshold
    return w, keep


def grid_graph(grid: np.ndarray, cfg: GraphConfig | None = None) -> SparseGraph:
    """4-neighbor graph over a regular grid, Gaussian-weighted by spacing."""
    n = infer_grid_dim(grid)
    cfg = cfg or GraphConfig()
    edges = grid_edges(n)
    s = grid_spacing(n)
    w = float(gaussian_weight(s * s, cfg.eps))
    return SparseGraph(n * n, edges, np.full(edges.shape[0], w))


def tear_graph(initial: SparseGraph, positions: np.ndarray,
               cfg: GraphConfig) -> SparseGraph:
    """Re-weight the initial edges on displaced positions, dropping any edge
    that falls outside the kernel truncation.  Never adds edges."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.shape[0] != initial.num_vertices:
        raise ValueError(
            f"{positions.shape[0]} positions for {initial.num_vertices} vertices")
    w, keep = edge_weights(positions, initial.edges, cfg)
    return SparseGraph(initial.num_vertices, initial.edges[keep], w[keep])


def laplacian(g: SparseGraph) -> np.ndarray:
    """Dense unnormalized Laplacian L = D - W (symmetric, zero row sums)."""
    m = g.num_vertices
    lap = np.zeros((m, m), dtype=np.float64)
    i, j = g.edges[:, 0], g.edges[:, 1]
    lap[i, j] = -g.weights
    lap[j, i] = -g.weights
    np.add.at(lap, (i, i), g.weights)
    np.add.at(lap, (j, j), g.weights)
    return lap


def laplacian_apply(g: SparseGraph, x: np.ndarray) -> np.ndarray:
    """L @ x via edge scatter; avoids materializing the dense matrix."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    i, j = g.edges[:, 0], g.edges[:, 1]
    d = (x[i] - x[j]) * g.weights[:, None]
    np.add.at(out, i, d)
    np.add.at(out, j, -d)
    return out


def graph_filter(cloud: np.ndarray, g: SparseGraph, lam: float) -> np.ndarray:
    """One-tap smoothing (I - lam*L) @ X with the cloud as an m x 3 matrix."""
    cloud = np.asarray(cloud)
    if cloud.shape[0] != g.num_vertices:
        raise ValueError(
            f"cloud has {cloud.shape[0]} points, graph has {g.num_vertices} vertices")
    out = cloud.astype(np.float64) - lam * laplacian_apply(g, cloud)
    return out.astype(cloud.dtype)


def face_table(n: int) -> np.ndarray:
    """Vertex quadruples of all (n-1)^2 elementary squares, row-major.

    Order: top-left, top-right, bottom-right, bottom-left in grid indices.
    """
    idx = np.arange(n * n).reshape(n, n)
    tl = idx[:-1, :-1].ravel()
    return np.stack([tl, tl + 1, tl + n + 1, tl + n], axis=1)


def alive_faces(n: int, torn: SparseGraph) -> np.ndarray:
    """Boolean mask over elementary squares whose 4 boundary edges all
    survive in the torn graph."""
    if torn.num_vertices != n * n:
        raise ValueError(f"graph has {torn.num_vertices} vertices, grid wants {n * n}")
    present = torn.edge_set()
    faces = face_table(n)
    mask = np.empty(faces.shape[0], dtype=bool)
    for k, (a, b, c, d) in enumerate(faces):
        mask[k] = ((int(a), int(b)) in present and (int(d), int(c)) in present
                   and (int(a), int(d)) in present and (int(b), int(c)) in present)
    return mask


def extract_mesh(n: int, torn: SparseGraph, cloud: np.ndarray) -> QuadMesh:
    """Quad mesh over the folded points: one face per surviving square."""
    cloud = np.asarray(cloud)
    if cloud.shape[0] != n * n:
        raise ValueError(f"cloud has {cloud.shape[0]} points, grid wants {n * n}")
    mask = alive_faces(n, torn)
    return QuadMesh(cloud, face_table(n)[mask])


def face_mask_from_mesh(n: int, mesh: QuadMesh) -> np.ndarray:
    """Alive-square mask recovered from an extracted mesh (resampling can
    start from either the torn graph or its mesh)."""
    present = {tuple(face) for face in mesh.faces.tolist()}
    return np.array([tuple(face) in present
                     for face in face_table(n).tolist()])


def remove_isolated(cloud: np.ndarray, torn: SparseGraph) -> tuple[np.ndarray, np.ndarray]:
    """Drop points whose vertex has degree 0; returns (survivors, kept indices)."""
    cloud = np.asarray(cloud)
    if cloud.shape[0] != torn.num_vertices:
        raise ValueError(
            f"cloud has {cloud.shape[0]} points, graph has {torn.num_vertices} vertices")
    kept = np.flatnonzero(torn.degrees() > 0)
    return cloud[kept], kept


def connected_components(g: SparseGraph) -> int:
    """Number of connected components (isolated vertices count)."""
    parent = np.arange(g.num_vertices)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in g.edges:
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[ri] = rj
    return len({find(int(v)) for v in range(g.num_vertices)})


def locate_cells(points2: np.ndarray, n: int) -> np.ndarray:
    """Row-major elementary-square index containing each 2D point."""
    s = grid_spacing(n)
    cols = np.clip(((points2[:, 0] + 1.0) / s).astype(np.int64), 0, n - 2)
    rows = np.clip(((points2[:, 1] + 1.0) / s).astype(np.int64), 0, n - 2)
    return rows * (n - 1) + cols


def resample_surface(decode_points: Callable[[np.ndarray], np.ndarray],
                     n: int,
                     face_mask: np.ndarray,
                     count: int,
                     rng: np.random.Generator,
                     oversample_cap: int = 100) -> np.ndarray:
    """Draw fresh surface samples, skipping pruned squares.

    2D points are drawn uniformly in [-1, 1]^2; a draw is kept only when its
    containing elementary square survived tearing.  Survivors are mapped
    through ``decode_points``.  Raises RuntimeError once ``oversample_cap``
    times ``count`` draws fail to produce enough survivors.
    """
    if count == 0:
        return np.zeros((0, 3))
    if not face_mask.any():
        raise RuntimeError("all faces pruned; nothing to resample")
    kept: list[np.ndarray] = []
    total_kept = 0
    drawn = 0
    budget = oversample_cap * count
    while total_kept < count:
        batch = min(max(count, 1024), budget - drawn)
        if batch <= 0:
            raise RuntimeError(
                f"resample cap exceeded: {total_kept}/{count} survivors "
                f"after {drawn} draws")
        pts = rng.uniform(-1.0, 1.0, size=(batch, 2))
        drawn += batch
        ok = face_mask[locate_cells(pts, n)]
        if ok.any():
            kept.append(pts[ok])
            total_kept += int(ok.sum())
    samples = np.concatenate(kept, axis=0)[:count]
    return decode_points(samples)


# ---------------------------------------------------------------------------
# file export
# ---------------------------------------------------------------------------

def mesh_to_obj(mesh: QuadMesh, path) -> None:
    """ASCII OBJ with v/f records; face indices are 1-based."""
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c, d in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1} {d + 1}\n")


def graph_to_csv(g: SparseGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "w"])
        for (i, j), w in zip(g.edges, g.weights):
            writer.writerow([int(i), int(j), f"{w:.17g}"])


def graph_from_csv(path) -> SparseGraph:
    edges = []
    weights = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["i", "j", "w"]:
            raise ValueError(f"{path}: expected header i,j,w, got {header}")
        for row in reader:
            edges.append((int(row[0]), int(row[1])))
            weights.append(float(row[2]))
    edges_arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    m = int(edges_arr.max()) + 1 if len(edges) else 0
    return SparseGraph(m, edges_arr, np.asarray(weights))
