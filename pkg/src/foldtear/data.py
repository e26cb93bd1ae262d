"""Synthetic datasets: ring-linked torus chains and multi-object playground
scenes, plus ASCII PLY round-trip and manifest-driven dataset generation.

Every generator is a pure function of (spec, seed); regenerating from a
manifest reproduces the files byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("sphere", "box", "cylinder", "torus", "cone")

PLAYGROUND_POINTS = 2048
CELL_FILL = 0.8  # object diameter as a fraction of the cell width


@dataclass(frozen=True)
class TorusSpec:
    genus: int
    tube_radius: float = 0.3
    ring_radius: float = 1.0
    count: int = 2048
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.genus < 1:
            raise ValueError(f"genus must be >= 1, got {self.genus}")
        if not (0 < self.tube_radius < self.ring_radius):
            raise ValueError("need 0 < tube_radius < ring_radius")


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    cell: tuple[int, int]       # (row, col) on the playground
    scale_jitter: float = 1.0   # multiplies the cell-fitting scale
    yaw: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")


@dataclass(frozen=True)
class SceneSpec:
    playground_dim: int
    objects: tuple[ObjectSpec, ...]
    count: int = PLAYGROUND_POINTS
    seed: int = 0

    def __post_init__(self):
        k = len(self.objects)
        if not (1 <= k <= self.playground_dim**2):
            raise ValueError(
                f"object count {k} outside [1, K^2={self.playground_dim ** 2}]")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != k:
            raise ValueError(f"cells must be distinct, got {cells}")
        for r, c in cells:
            if not (0 <= r < self.playground_dim and 0 <= c < self.playground_dim):
                raise ValueError(f"cell {(r, c)} outside the playground")


# ---------------------------------------------------------------------------
# surface samplers (uniform by area, unit-normalized)
# ---------------------------------------------------------------------------

def _unit_normalize(pts: np.ndarray) -> np.ndarray:
    center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    pts = pts - center
    return pts / np.linalg.norm(pts, axis=1).max()


def _sample_torus_angles(n: int, ring: float, tube: float,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-uniform (theta, phi); phi is rejection-sampled against the
    ring-side bias of the parametric area element."""
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    phi = np.empty(n)
    got = 0
    while got < n:
        cand = rng.uniform(0.0, 2 * np.pi, size=2 * (n - got))
        accept = rng.uniform(0.0, 1.0, size=cand.size) <= (
            (ring + tube * np.cos(cand)) / (ring + tube))
        take = cand[accept][: n - got]
        phi[got:got + take.size] = take
        got += take.size
    return theta, phi


def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms == 0, 1.0, norms)


def sample_box(n: int, rng: np.random.Generator) -> np.ndarray:
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        sel = axis == a
        others = [b for b in range(3) if b != a]
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return _unit_normalize(pts)


def sample_cylinder(n: int, rng: np.random.Generator) -> np.ndarray:
    radius, height = 0.6, 1.6
    lateral = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.uniform(0.0, lateral + 2 * cap, size=n)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    u = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 3))
    on_side = part < lateral
    pts[on_side, 0] = radius * np.cos(theta[on_side])
    pts[on_side, 1] = radius * np.sin(theta[on_side])
    pts[on_side, 2] = (u[on_side] - 0.5) * height
    caps = ~on_side
    r = radius * np.sqrt(u[caps])
    pts[caps, 0] = r * np.cos(theta[caps])
    pts[caps, 1] = r * np.sin(theta[caps])
    pts[caps, 2] = np.where(part[caps] < lateral + cap, 0.5, -0.5) * height
    return _unit_normalize(pts)


def sample_torus(n: int, rng: np.random.Generator) -> np.ndarray:
    ring, tube = 1.0, 0.4
    theta, phi = _sample_torus_angles(n, ring, tube, rng)
    return _unit_normalize(_torus_points(theta, phi, ring, tube))


def sample_cone(n: int, rng: np.random.Generator) -> np.ndarray:
    radius, height = 0.7, 1.4
    lateral = np.pi * radius * np.hypot(radius, height)
    base = np.pi * radius**2
    part = rng.uniform(0.0, lateral + base, size=n)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    u = rng.uniform(0.0, 1.0, size=n)
    pts = np.empty((n, 3))
    side = part < lateral
    t = np.sqrt(u[side])  # area grows with the square of the apex distance
    pts[side, 0] = t * radius * np.cos(theta[side])
    pts[side, 1] = t * radius * np.sin(theta[side])
    pts[side, 2] = height * (1.0 - t)
    on_base = ~side
    r = radius * np.sqrt(u[on_base])
    pts[on_base, 0] = r * np.cos(theta[on_base])
    pts[on_base, 1] = r * np.sin(theta[on_base])
    pts[on_base, 2] = 0.0
    return _unit_normalize(pts)


SHAPE_SAMPLERS = {
    "sphere": sample_sphere,
    "box": sample_box,
    "cylinder": sample_cylinder,
    "torus": sample_torus,
    "cone": sample_cone,
}


def _torus_points(theta, phi, ring, tube):
    rad = ring + tube * np.cos(phi)
    return np.stack([rad * np.cos(theta), rad * np.sin(theta),
                     tube * np.sin(phi)], axis=1)


def _split_counts(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_torus(spec: TorusSpec) -> np.ndarray:
    """Chain of ``genus`` ring-linked tori along +x.

    Each link is rotated 90 degrees about the chain axis and centered on the
    previous ring, so consecutive tubes interlock without touching.
    """
    rng = np.random.default_rng(spec.seed)
    ring, tube = spec.ring_radius, spec.tube_radius
    chunks = []
    for t, n_t in enumerate(_split_counts(spec.count, spec.genus)):
        theta, phi = _sample_torus_angles(n_t, ring, tube, rng)
        pts = _torus_points(theta, phi, ring, tube)
        if t % 2 == 1:  # ring moves from the xy- into the xz-plane
            pts = pts[:, [0, 2, 1]] * np.array([1.0, -1.0, 1.0])
        pts[:, 0] += t * ring
        chunks.append(pts)
    cloud = np.concatenate(chunks, axis=0)
    if spec.normalize:
        cloud = cloud - cloud.mean(axis=0)
        cloud = cloud / np.linalg.norm(cloud, axis=1).max()
    return cloud


def gen_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Playground scene; returns (cloud, per-point object index).

    Objects are unit-normalized, scaled to ``CELL_FILL`` of their cell (times
    the per-object jitter), yawed, and dropped at their cell centers, so
    point sets of distinct objects never touch.
    """
    rng = np.random.default_rng(spec.seed)
    cell_w = 2.0 / spec.playground_dim
    clouds = []
    labels = []
    for i, (obj, n_i) in enumerate(
            zip(spec.objects, _split_counts(spec.count, len(spec.objects)))):
        pts = SHAPE_SAMPLERS[obj.shape](n_i, rng)
        pts = pts * (0.5 * CELL_FILL * cell_w * obj.scale_jitter)
        c, s = np.cos(obj.yaw), np.sin(obj.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T
        row, col = obj.cell
        pts += np.array([-1.0 + (col + 0.5) * cell_w,
                         -1.0 + (row + 0.5) * cell_w, 0.0])
        clouds.append(pts)
        labels.append(np.full(n_i, i, dtype=np.int64))
    return np.concatenate(clouds, axis=0), np.concatenate(labels)


def random_scene_spec(playground_dim: int, rng: np.random.Generator,
                      k: int | None = None, count: int = PLAYGROUND_POINTS,
                      sample_seed: int = 0) -> SceneSpec:
    kmax = playground_dim**2
    if k is None:
        k = int(rng.integers(1, kmax + 1))
    cells = rng.choice(kmax, size=k, replace=False)
    objects = tuple(
        ObjectSpec(shape=SHAPES[int(rng.integers(len(SHAPES)))],
                   cell=(int(c) // playground_dim, int(c) % playground_dim),
                   scale_jitter=float(rng.uniform(0.8, 1.0)),
                   yaw=float(rng.uniform(0.0, 2 * np.pi)))
        for c in cells)
    return SceneSpec(playground_dim, objects, count=count, seed=sample_seed)


# ---------------------------------------------------------------------------
# PLY I/O
# ---------------------------------------------------------------------------

def ply_write(path, cloud: np.ndarray, attr: np.ndarray | None = None,
              attr_name: str = "label") -> None:
    """ASCII PLY with float32 x/y/z and an optional scalar per-point column."""
    cloud = np.asarray(cloud, dtype=np.float32)
    lines = ["ply", "format ascii 1.0", "comment foldtear point cloud",
             f"element vertex {cloud.shape[0]}",
             "property float x", "property float y", "property float z"]
    if attr is not None:
        attr = np.asarray(attr, dtype=np.float32)
        if attr.shape[0] != cloud.shape[0]:
            raise ValueError("attribute length does not match the cloud")
        lines.append(f"property float {attr_name}")
    lines.append("end_header")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        if attr is None:
            for x, y, z in cloud:
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
        else:
            for (x, y, z), a in zip(cloud, attr):
                fh.write(f"{x:.9g} {y:.9g} {z:.9g} {a:.9g}\n")


class PlyParseError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")


def ply_read(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read an ASCII PLY with float x,y,z (+ one optional scalar property)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise PlyParseError(path, 1, "missing 'ply' magic")
    count = None
    props: list[str] = []
    body_start = None
    for no, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise PlyParseError(path, no, f"unsupported format {tok[1]!r}")
        elif tok[0] == "element":
            if tok[1] != "vertex":
                raise PlyParseError(path, no, f"unsupported element {tok[1]!r}")
            count = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[2])
        elif tok[0] == "end_header":
            body_start = no
            break
        else:
            raise PlyParseError(path, no, f"unexpected header line {line!r}")
    if count is None or body_start is None:
        raise PlyParseError(path, len(lines), "header ended before end_header")
    if props[:3] != ["x", "y", "z"] or len(props) > 4:
        raise PlyParseError(path, body_start, f"unsupported properties {props}")
    body = lines[body_start:body_start + count]
    if len(body) < count:
        raise PlyParseError(path, len(lines),
                            f"expected {count} vertices, found {len(body)}")
    cloud = np.empty((count, 3), dtype=np.float32)
    attr = np.empty(count, dtype=np.float32) if len(props) == 4 else None
    for i, line in enumerate(body):
        tok = line.split()
        if len(tok) != len(props):
            raise PlyParseError(path, body_start + 1 + i,
                                f"expected {len(props)} values, got {len(tok)}")
        cloud[i] = [float(tok[0]), float(tok[1]), float(tok[2])]
        if attr is not None:
            attr[i] = float(tok[3])
    return cloud, attr


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

DATASET_PRESETS = {
    "torus": dict(family="torus", train=300, test=0, count=2048),
    "torus-mini": dict(family="torus", train=16, test=4, count=1024),
    "kimo3-mini": dict(family="playground", playground_dim=3, train=300,
                       test=60, count=2048),
    "kimo3-tiny": dict(family="playground", playground_dim=3, train=40,
                       test=10, count=2048),
    "kimo3-micro": dict(family="playground", playground_dim=3, train=8,
                        test=4, count=256),
    "duo-mini": dict(family="playground", playground_dim=3, train=16, test=0,
                     count=2048, k_cycle=(1, 2)),
}


def _item_spec(family: str, seed: int, split: str, index: int, count: int,
               playground_dim: int = 3, genus_choices=(1, 2, 3),
               k_cycle=None) -> dict:
    """Deterministic per-item spec; the manifest stores exactly this."""
    split_code = {"train": 0, "test": 1}[split]
    ss = np.random.SeedSequence([seed, split_code, index])
    spec_seq, sample_seq = ss.spawn(2)
    sample_seed = int(sample_seq.generate_state(1)[0])
    rng = np.random.default_rng(spec_seq)
    if family == "torus":
        genus = int(genus_choices[index % len(genus_choices)])
        return {"kind": "torus", "genus": genus, "count": count,
                "seed": sample_seed}
    k = int(k_cycle[index % len(k_cycle)]) if k_cycle else None
    spec = random_scene_spec(playground_dim, rng, k=k, count=count,
                             sample_seed=sample_seed)
    return {
        "kind": "scene", "playground_dim": playground_dim, "count": count,
        "seed": sample_seed, "k": len(spec.objects),
        "objects": [{"shape": o.shape, "cell": list(o.cell),
                     "scale_jitter": o.scale_jitter, "yaw": o.yaw}
                    for o in spec.objects],
    }


def build_item(item: dict) -> tuple[np.ndarray, np.ndarray | None]:
    """Materialize the cloud (and per-point labels) for one manifest item."""
    if item["kind"] == "torus":
        spec = TorusSpec(genus=item["genus"], count=item["count"],
                         seed=item["seed"])
        return gen_torus(spec), None
    objects = tuple(ObjectSpec(shape=o["shape"], cell=tuple(o["cell"]),
                               scale_jitter=o["scale_jitter"], yaw=o["yaw"])
                    for o in item["objects"])
    spec = SceneSpec(item["playground_dim"], objects, count=item["count"],
                     seed=item["seed"])
    return gen_scene(spec)


def _write_item(root: Path, item: dict) -> None:
    cloud, labels = build_item(item)
    ply_write(root / item["file"], cloud, labels,
              attr_name="object" if labels is not None else "label")


def gen_dataset(root, name: str, seed: int, family: str, train: int,
                test: int, count: int, playground_dim: int = 3,
                genus_choices=(1, 2, 3), k_cycle=None,
                workers: int | None = None) -> dict:
    """Write `<root>/<name>/<split>/<index>.ply` plus a JSON manifest."""
    root = Path(root)
    out = root / name
    manifest = {"name": name, "family": family, "seed": seed, "count": count,
                "splits": {}}
    if family == "playground":
        manifest["playground_dim"] = playground_dim
    items: list[dict] = []
    for split, size in (("train", train), ("test", test)):
        entries = []
        for i in range(size):
            item = _item_spec(family, seed, split, i, count,
                              playground_dim=playground_dim,
                              genus_choices=genus_choices, k_cycle=k_cycle)
            item["index"] = i
            item["file"] = f"{split}/{i:05d}.ply"
            entries.append(item)
        manifest["splits"][split] = entries
        items.extend(entries)
        (out / split).mkdir(parents=True, exist_ok=True)

    workers = workers if workers is not None else worker_count()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_write_item, [out] * len(items), items))
    else:
        for item in items:
            _write_item(out, item)

    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def dataset_from_preset(root, preset: str, seed: int,
                        workers: int | None = None) -> dict:
    if preset not in DATASET_PRESETS:
        raise ValueError(
            f"unknown dataset preset {preset!r}; options: {sorted(DATASET_PRESETS)}")
    return gen_dataset(root, preset, seed, workers=workers,
                       **DATASET_PRESETS[preset])


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path) as fh:
        manifest = json.load(fh)
    manifest["_dir"] = str(path.parent)
    return manifest


def load_split(manifest: dict, split: str) -> list[dict]:
    """Items of a split with their clouds loaded from disk."""
    root = Path(manifest["_dir"])
    out = []
    for item in manifest["splits"][split]:
        cloud, labels = ply_read(root / item["file"])
        entry = dict(item)
        entry["cloud"] = cloud
        entry["point_labels"] = labels
        out.append(entry)
    return out


def points2_csv_write(path, pts: np.ndarray) -> None:
    """2D point list as CSV with a u,v header (torn-grid export)."""
    pts = np.asarray(pts)
    with open(path, "w") as fh:
        fh.write("u,v\n")
        for u, v in pts:
            fh.write(f"{u:.9g},{v:.9g}\n")


def points2_csv_read(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "u,v":
        raise ValueError(f"{path}: expected a u,v header")
    return np.array([[float(a) for a in ln.split(",")] for ln in lines[1:]])


def worker_count() -> int:
    """Worker override from the environment; 1 (serial) by default."""
    raw = os.environ.get("FOLDTEAR_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
