import numpy as np
import pytest

from foldtear import geometry as geo
from foldtear.geometry import GraphConfig, SparseGraph


def bfs_components(num_vertices, edges):
    """Independent connected-components oracle."""
    adj = {v: [] for v in range(num_vertices)}
    for i, j in edges:
        adj[int(i)].append(int(j))
        adj[int(j)].append(int(i))
    seen = set()
    comps = 0
    for v in range(num_vertices):
        if v in seen:
            continue
        comps += 1
        stack = [v]
        seen.add(v)
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
    return comps


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def test_grid_corners():
    pts = geo.make_grid(2)
    assert {tuple(p) for p in pts} == {(-1, -1), (-1, 1), (1, -1), (1, 1)}


def test_grid_full_scale_spacing():
    pts = geo.make_grid(45)
    assert pts.shape == (2025, 2)
    us = np.unique(pts[:, 0])
    np.testing.assert_allclose(np.diff(us), 2.0 / 44, atol=1e-12)


def test_grid_middle_point():
    pts = geo.make_grid(3)
    np.testing.assert_array_equal(pts[4], [0.0, 0.0])


def test_grid_rejects_small_n():
    with pytest.raises(ValueError):
        geo.make_grid(1)


def test_grid_point_symmetry():
    pts = geo.make_grid(7)
    mirrored = {(-u, -v) for u, v in np.round(pts, 12)}
    assert mirrored == {tuple(p) for p in np.round(pts, 12)}


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def test_grid_graph_square():
    g = geo.grid_graph(geo.make_grid(2))
    assert g.num_edges == 4
    assert (0, 3) not in g.edge_set() and (1, 2) not in g.edge_set()


def test_grid_graph_weight_full_scale():
    g = geo.grid_graph(geo.make_grid(45), GraphConfig(eps=0.02))
    expected = np.exp(-((2.0 / 44) ** 2) / (2 * 0.02**2))
    np.testing.assert_allclose(g.weights, expected, rtol=1e-12)
    assert abs(expected - 0.0754) < 2e-3


def test_grid_graph_degree():
    g = geo.grid_graph(geo.make_grid(3))
    assert g.num_edges == 12
    assert g.degrees()[4] == 4


def test_grid_graph_rejects_non_grid():
    with pytest.raises(ValueError):
        geo.grid_graph(np.random.default_rng(0).uniform(-1, 1, size=(9, 2)))


def test_grid_config_2d_radius_excludes_diagonals():
    cfg = geo.grid_config_2d(5)
    s = geo.grid_spacing(5)
    assert cfg.mode == "2d"
    assert s < cfg.radius < s * np.sqrt(2)  # neighbors in, diagonals out


def test_eq1_weight_zero_distance():
    cfg = GraphConfig(mode="2d", radius=0.5)
    assert geo.eq1_weight([0.1, 0.2], [0.1, 0.2], cfg) == 1.0


def test_eq1_weight_2d_truncation():
    cfg = GraphConfig(mode="2d", radius=0.5)
    assert geo.eq1_weight([0.0, 0.0], [0.6, 0.0], cfg) == 0.0


def test_eq1_weight_5d_threshold():
    cfg = GraphConfig(eps=0.02)
    a = np.zeros(5)
    below = a.copy()
    below[0] = 0.149
    assert geo.eq1_weight(a, below, cfg) == 0.0
    kept = a.copy()
    kept[0] = 0.10
    np.testing.assert_allclose(geo.eq1_weight(a, kept, cfg), np.exp(-12.5), rtol=1e-12)
    assert abs(np.exp(-12.5) - 3.73e-6) < 1e-8


def test_eq1_weight_dim_mismatch():
    with pytest.raises(ValueError):
        geo.eq1_weight([0.0, 0.0], [0.0, 0.0, 0.0], GraphConfig())


def test_tear_graph_identity_positions():
    grid = geo.make_grid(5)
    cfg = GraphConfig(mode="2d", radius=1.05 * geo.grid_spacing(5))
    g0 = geo.grid_graph(grid, cfg)
    torn = geo.tear_graph(g0, grid, cfg)
    np.testing.assert_array_equal(torn.edges, g0.edges)
    np.testing.assert_allclose(torn.weights, g0.weights, rtol=1e-12)


def test_tear_graph_isolates_far_vertex():
    grid = geo.make_grid(4)
    cfg = GraphConfig(mode="2d", radius=1.05 * geo.grid_spacing(4))
    g0 = geo.grid_graph(grid, cfg)
    moved = grid.copy()
    moved[5, 0] += 10.0
    torn = geo.tear_graph(g0, moved, cfg)
    assert torn.degrees()[5] == 0
    assert torn.num_edges == g0.num_edges - 4


def test_tear_graph_splits_halves():
    n = 6
    grid = geo.make_grid(n)
    cfg = GraphConfig(mode="2d", radius=1.05 * geo.grid_spacing(n))
    g0 = geo.grid_graph(grid, cfg)
    moved = grid.copy()
    moved[moved[:, 0] > 0, 0] += 1.0
    moved[moved[:, 0] <= 0, 0] -= 1.0
    torn = geo.tear_graph(g0, moved, cfg)
    left = set(np.flatnonzero(moved[:, 0] < 0))
    crossing = [e for e in torn.edge_set()
                if (e[0] in left) != (e[1] in left)]
    assert crossing == []
    assert bfs_components(torn.num_vertices, torn.edges) == 2
    assert geo.connected_components(torn) == 2


def test_tear_monotonicity_random():
    rng = np.random.default_rng(42)
    grid = geo.make_grid(5)
    cfg = GraphConfig(eps=0.02)
    g0 = geo.grid_graph(grid, cfg)
    for _ in range(20):
        pos5 = np.hstack([grid + rng.normal(scale=0.2, size=grid.shape),
                          rng.normal(scale=0.3, size=(grid.shape[0], 3))])
        torn = geo.tear_graph(g0, pos5, cfg)
        assert torn.edge_set() <= g0.edge_set()
        assert np.all(torn.weights > 0) and np.all(torn.weights <= 1.0)


def test_tear_graph_count_mismatch():
    g0 = geo.grid_graph(geo.make_grid(3))
    with pytest.raises(ValueError):
        geo.tear_graph(g0, np.zeros((4, 2)), GraphConfig())


# ---------------------------------------------------------------------------
# laplacian / filter
# ---------------------------------------------------------------------------

def test_laplacian_edgeless():
    lap = geo.laplacian(SparseGraph(3, np.zeros((0, 2)), np.zeros(0)))
    np.testing.assert_array_equal(lap, np.zeros((3, 3)))


def test_laplacian_single_edge():
    lap = geo.laplacian(SparseGraph(2, [[0, 1]], [0.7]))
    np.testing.assert_allclose(lap, [[0.7, -0.7], [-0.7, 0.7]])


def test_laplacian_properties_random():
    rng = np.random.default_rng(1)
    for m in (8, 33, 64):
        pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
        take = rng.choice(len(pairs), size=2 * m, replace=False)
        edges = np.array([pairs[t] for t in take])
        weights = rng.uniform(0.05, 1.0, size=2 * m)
        lap = geo.laplacian(SparseGraph(m, edges, weights))
        np.testing.assert_allclose(lap, lap.T, atol=0)
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-12)
        assert np.linalg.eigvalsh(lap).min() >= -1e-9


def test_filter_lambda_zero_identity():
    rng = np.random.default_rng(2)
    cloud = rng.normal(size=(9, 3))
    g = geo.grid_graph(geo.make_grid(3))
    np.testing.assert_array_equal(geo.graph_filter(cloud, g, 0.0), cloud)


def test_filter_constant_cloud_fixed_point():
    g = geo.grid_graph(geo.make_grid(4), GraphConfig(eps=1.0))
    cloud = np.tile([[0.3, -0.7, 2.0]], (16, 1))
    np.testing.assert_allclose(geo.graph_filter(cloud, g, 0.5), cloud, atol=1e-12)


def test_filter_hand_example():
    g = SparseGraph(2, [[0, 1]], [0.5])
    cloud = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    out = geo.graph_filter(cloud, g, 0.5)
    np.testing.assert_allclose(out, [[0.25, 0, 0], [0.75, 0, 0]], atol=1e-15)


def test_filter_matches_dense_laplacian():
    rng = np.random.default_rng(3)
    grid = geo.make_grid(5)
    cfg = GraphConfig(eps=0.5)
    torn = geo.tear_graph(geo.grid_graph(grid, cfg),
                          grid + rng.normal(scale=0.1, size=grid.shape), cfg)
    cloud = rng.normal(size=(25, 3))
    dense = cloud - 0.6 * geo.laplacian(torn) @ cloud
    np.testing.assert_allclose(geo.graph_filter(cloud, torn, 0.6), dense, atol=1e-12)


def test_filter_count_mismatch():
    g = geo.grid_graph(geo.make_grid(3))
    with pytest.raises(ValueError):
        geo.graph_filter(np.zeros((4, 3)), g, 0.5)


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

def brute_force_alive(n, edge_set):
    """Face-scan oracle: a square lives iff its 4 sides are present."""
    alive = []
    for r in range(n - 1):
        for c in range(n - 1):
            tl = r * n + c
            sides = [(tl, tl + 1), (tl + n, tl + n + 1), (tl, tl + n),
                     (tl + 1, tl + n + 1)]
            alive.append(all(s in edge_set for s in sides))
    return np.array(alive)


def test_mesh_untorn_counts():
    n = 5
    grid = geo.make_grid(n)
    g = geo.grid_graph(grid)
    cloud = np.hstack([grid, np.zeros((n * n, 1))])
    mesh = geo.extract_mesh(n, g, cloud)
    assert mesh.faces.shape == ((n - 1) ** 2, 4)
    assert np.all(mesh.faces >= 0) and np.all(mesh.faces < n * n)


def test_mesh_one_interior_edge_removed():
    n = 4
    g = geo.grid_graph(geo.make_grid(n))
    drop = (5, 6)  # interior horizontal edge shared by two squares
    keep = np.array([tuple(e) != drop for e in g.edges])
    torn = SparseGraph(n * n, g.edges[keep], g.weights[keep])
    mask = geo.alive_faces(n, torn)
    assert mask.sum() == (n - 1) ** 2 - 2
    np.testing.assert_array_equal(mask, brute_force_alive(n, torn.edge_set()))


def test_mesh_fully_torn():
    n = 3
    torn = SparseGraph(9, np.zeros((0, 2)), np.zeros(0))
    cloud = np.zeros((9, 3))
    assert geo.extract_mesh(n, torn, cloud).faces.shape[0] == 0


@pytest.mark.parametrize("n", [3, 5, 10])
def test_mesh_brute_force_equivalence(n):
    rng = np.random.default_rng(n)
    g = geo.grid_graph(geo.make_grid(n))
    for _ in range(10):
        keep = rng.uniform(size=g.num_edges) > 0.3
        torn = SparseGraph(n * n, g.edges[keep], g.weights[keep])
        np.testing.assert_array_equal(
            geo.alive_faces(n, torn), brute_force_alive(n, torn.edge_set()))


def test_mesh_size_mismatch():
    g = geo.grid_graph(geo.make_grid(3))
    with pytest.raises(ValueError):
        geo.extract_mesh(3, g, np.zeros((5, 3)))


def test_face_mask_from_mesh_roundtrip():
    n = 5
    rng = np.random.default_rng(8)
    g = geo.grid_graph(geo.make_grid(n))
    keep = rng.uniform(size=g.num_edges) > 0.4
    torn = SparseGraph(n * n, g.edges[keep], g.weights[keep])
    mesh = geo.extract_mesh(n, torn, np.zeros((n * n, 3)))
    np.testing.assert_array_equal(geo.face_mask_from_mesh(n, mesh),
                                  geo.alive_faces(n, torn))


# ---------------------------------------------------------------------------
# resampling / isolated points
# ---------------------------------------------------------------------------

def lift(pts2):
    return np.hstack([pts2, np.sum(pts2**2, axis=1, keepdims=True)])


def test_resample_nothing_pruned():
    n = 5
    mask = np.ones((n - 1) ** 2, dtype=bool)
    out = geo.resample_surface(lift, n, mask, 100, np.random.default_rng(0))
    assert out.shape == (100, 3)


def test_resample_half_pruned_acceptance_rate():
    n = 9
    mask = np.zeros((n - 1) ** 2, dtype=bool)
    mask[::2] = True  # alternating squares
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(10_000, 2))
    accepted = mask[geo.locate_cells(pts, n)].mean()
    assert abs(accepted - 0.5) < 0.03


def test_resample_respects_mask():
    n = 4
    mask = np.zeros((n - 1) ** 2, dtype=bool)
    mask[0] = True  # only the lower-left square survives
    out = geo.resample_surface(lambda p: lift(p), n, mask, 50,
                               np.random.default_rng(2))
    s = geo.grid_spacing(n)
    assert np.all(out[:, 0] <= -1 + s) and np.all(out[:, 1] <= -1 + s)


def test_resample_zero_count():
    out = geo.resample_surface(lift, 3, np.ones(4, bool), 0,
                               np.random.default_rng(0))
    assert out.shape == (0, 3)


def test_resample_all_pruned():
    with pytest.raises(RuntimeError, match="pruned"):
        geo.resample_surface(lift, 3, np.zeros(4, bool), 10,
                             np.random.default_rng(0))


def test_remove_isolated_identity():
    g = geo.grid_graph(geo.make_grid(3))
    cloud = np.arange(27.0).reshape(9, 3)
    out, kept = geo.remove_isolated(cloud, g)
    np.testing.assert_array_equal(out, cloud)
    np.testing.assert_array_equal(kept, np.arange(9))


def test_remove_isolated_all_and_one():
    cloud = np.arange(27.0).reshape(9, 3)
    empty = SparseGraph(9, np.zeros((0, 2)), np.zeros(0))
    out, _ = geo.remove_isolated(cloud, empty)
    assert out.shape == (0, 3)

    g = geo.grid_graph(geo.make_grid(3))
    keep = np.array([4 not in e for e in g.edges])
    torn = SparseGraph(9, g.edges[keep], g.weights[keep])
    out, kept = geo.remove_isolated(cloud, torn)
    assert out.shape == (8, 3) and 4 not in kept
    # survivor order preserved
    np.testing.assert_array_equal(kept, [0, 1, 2, 3, 5, 6, 7, 8])


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_obj_export(tmp_path):
    mesh = geo.QuadMesh(np.arange(12.0).reshape(4, 3), [[0, 1, 3, 2]])
    path = tmp_path / "m.obj"
    geo.mesh_to_obj(mesh, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("v ") and lines[-1] == "f 1 2 4 3"


def test_graph_csv_roundtrip(tmp_path):
    g = geo.grid_graph(geo.make_grid(3))
    path = tmp_path / "g.csv"
    geo.graph_to_csv(g, path)
    back = geo.graph_from_csv(path)
    np.testing.assert_array_equal(back.edges, g.edges)
    np.testing.assert_allclose(back.weights, g.weights, rtol=1e-15)
