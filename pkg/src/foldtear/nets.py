"""Encoder, folding and tearing networks, and their assembled decoders.

All three networks are point-wise MLPs sharing parameters across points, so
a whole batch of scenes is pushed through each layer as one matrix product.
The decoder variants differ only in wiring:

  fold            one folding pass
  cascade         two folding passes with independent parameters
  tear            fold -> tear -> fold, torn graph, smoothing filter
  tear_first      tear (3D slot zeroed) -> fold, torn graph, filter
  tear_nofilter   fold -> tear -> fold, torn graph kept, no filter
  tear3           fold -> tear -> fold -> tear -> fold, graph + filter
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import geometry as geo
from . import numeric as nm
from .geometry import GraphConfig, SparseGraph
from .numeric import Tensor

VARIANTS = ("fold", "cascade", "tear", "tear_first", "tear_nofilter", "tear3")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "tear"
    codeword_dim: int = 512
    grid_dim: int = 45
    enc_point_widths: tuple[int, ...] = (64, 128, 1024)
    enc_head_widths: tuple[int, ...] = (512,)
    fold_hidden: tuple[int, ...] = (512, 512)
    tear_hidden: tuple[int, ...] = (512, 512)
    graph: GraphConfig = field(default_factory=GraphConfig)
    filter_weight: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; options: {VARIANTS}")

    @property
    def has_tear(self) -> bool:
        return self.variant.startswith("tear")

    @property
    def has_graph(self) -> bool:
        return self.has_tear

    @property
    def has_filter(self) -> bool:
        return self.variant in ("tear", "tear_first", "tear3")

    @property
    def num_points(self) -> int:
        return self.grid_dim**2


MODEL_PRESETS = {
    "full": ModelConfig(),
    # eps scales with the coarser desk grid so the edge-break distance sits
    # between within-object fold stretch and inter-object gaps, mirroring
    # the full-scale ratio of spacing to kernel width
    "desk": ModelConfig(codeword_dim=128, grid_dim=23,
                        enc_point_widths=(16, 32, 256), enc_head_widths=(128,),
                        fold_hidden=(128, 128), tear_hidden=(128, 128),
                        graph=GraphConfig(eps=0.026)),
    "tiny": ModelConfig(codeword_dim=6, grid_dim=3,
                        enc_point_widths=(8, 10), enc_head_widths=(8,),
                        fold_hidden=(8,), tear_hidden=(8,),
                        graph=GraphConfig(eps=1.0)),
}


def preset(name: str, variant: str = "tear", **overrides) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ValueError(f"unknown model preset {name!r}; options: "
                         f"{sorted(MODEL_PRESETS)}")
    return replace(MODEL_PRESETS[name], variant=variant, **overrides)


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "variant": cfg.variant, "codeword_dim": cfg.codeword_dim,
        "grid_dim": cfg.grid_dim,
        "enc_point_widths": list(cfg.enc_point_widths),
        "enc_head_widths": list(cfg.enc_head_widths),
        "fold_hidden": list(cfg.fold_hidden),
        "tear_hidden": list(cfg.tear_hidden),
        "graph": {"eps": cfg.graph.eps,
                  "weight_threshold": cfg.graph.weight_threshold,
                  "mode": cfg.graph.mode, "radius": cfg.graph.radius},
        "filter_weight": cfg.filter_weight,
    }


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        variant=d["variant"], codeword_dim=d["codeword_dim"],
        grid_dim=d["grid_dim"],
        enc_point_widths=tuple(d["enc_point_widths"]),
        enc_head_widths=tuple(d["enc_head_widths"]),
        fold_hidden=tuple(d["fold_hidden"]),
        tear_hidden=tuple(d["tear_hidden"]),
        graph=GraphConfig(**d["graph"]),
        filter_weight=d["filter_weight"],
    )


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _mlp_widths(cfg: ModelConfig) -> dict[str, list[int]]:
    d = cfg.codeword_dim
    widths = {
        "enc.point": [3, *cfg.enc_point_widths],
        "enc.head": [cfg.enc_point_widths[-1], *cfg.enc_head_widths, d],
        "fold.s1": [2 + d, *cfg.fold_hidden, 3],
        "fold.s2": [3 + d, *cfg.fold_hidden, 3],
    }
    if cfg.variant == "cascade":
        widths["fold2.s1"] = [3 + d, *cfg.fold_hidden, 3]
        widths["fold2.s2"] = [3 + d, *cfg.fold_hidden, 3]
    if cfg.has_tear:
        widths["tear.s1"] = [2 + 3 + d, *cfg.tear_hidden, 2]
        widths["tear.s2"] = [2 + 3 + d, *cfg.tear_hidden, 2]
    return widths


def init_params(cfg: ModelConfig, seed: int, dtype=nm.DEFAULT_DTYPE,
                zero_tear_final: bool = False) -> dict[str, Tensor]:
    """Seeded init: weights uniform +-sqrt(6/(fan_in+fan_out)), zero biases.

    ``zero_tear_final`` zeroes the tearing net's last layer so the decoder
    starts exactly at the plain-folding behavior (residual identity).
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for prefix, widths in _mlp_widths(cfg).items():
        for layer, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            w = nm.glorot_uniform(rng, fan_in, fan_out, dtype)
            b = np.zeros(fan_out, dtype)
            if (zero_tear_final and prefix == "tear.s2"
                    and layer == len(widths) - 2):
                w = np.zeros_like(w)
            params[f"{prefix}.{layer}.w"] = Tensor(w, requires_grad=True)
            params[f"{prefix}.{layer}.b"] = Tensor(b, requires_grad=True)
    return params


def zero_tear_final_layer(params: dict[str, Tensor], cfg: ModelConfig) -> None:
    widths = _mlp_widths(cfg)["tear.s2"]
    layer = len(widths) - 2
    params[f"tear.s2.{layer}.w"].data[...] = 0.0
    params[f"tear.s2.{layer}.b"].data[...] = 0.0


def stage_params(params: dict[str, Tensor], prefixes: Sequence[str]) -> dict[str, Tensor]:
    """Subset of a parameter dict by network prefix (e.g. 'enc', 'fold')."""
    return {k: v for k, v in params.items()
            if any(k.startswith(p + ".") for p in prefixes)}


def check_shapes(loaded: dict[str, np.ndarray], cfg: ModelConfig,
                 prefixes: Sequence[str]) -> None:
    """Reject a checkpoint whose arrays do not fit the target architecture."""
    expected = init_params(cfg, seed=0)
    for name, tensor in expected.items():
        if not any(name.startswith(p + ".") for p in prefixes):
            continue
        if name not in loaded:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if loaded[name].shape != tensor.data.shape:
            raise ValueError(
                f"architecture mismatch for {name!r}: checkpoint has shape "
                f"{loaded[name].shape}, config wants {tensor.data.shape}")


def _mlp(params: dict[str, Tensor], prefix: str, x: Tensor,
         num_layers: int) -> Tensor:
    for layer in range(num_layers):
        x = nm.add(nm.matmul(x, params[f"{prefix}.{layer}.w"]),
                   params[f"{prefix}.{layer}.b"])
        if layer < num_layers - 1:
            x = nm.relu(x)
    return x


def _mlp_depth(cfg: ModelConfig, prefix: str) -> int:
    return len(_mlp_widths(cfg)[prefix]) - 1


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------

def encode_batch(params: dict[str, Tensor], cfg: ModelConfig,
                 clouds: np.ndarray) -> Tensor:
    """(B, n, 3) clouds -> (B, d) codewords.

    Shared point MLP, max-pool over each cloud's points, then the head MLP;
    the pooled features are invariant to point order within a cloud.
    """
    clouds = np.asarray(clouds)
    if clouds.ndim == 2:
        clouds = clouds[None]
    batch, n, _ = clouds.shape
    if n < 1:
        raise ValueError("cannot encode an empty point cloud")
    flat = Tensor(clouds.reshape(batch * n, 3))
    feat = _mlp(params, "enc.point", flat, _mlp_depth(cfg, "enc.point"))
    pooled = nm.max_over_segments(feat, batch)
    return _mlp(params, "enc.head", pooled, _mlp_depth(cfg, "enc.head"))


def encode(params: dict[str, Tensor], cfg: ModelConfig, cloud: np.ndarray) -> Tensor:
    """Single cloud -> (1, d) codeword."""
    cloud = np.asarray(cloud)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or cloud.shape[0] < 1:
        raise ValueError(f"expected a non-empty (n, 3) cloud, got {cloud.shape}")
    return encode_batch(params, cfg, cloud[None])


# ---------------------------------------------------------------------------
# decoder stages
# ---------------------------------------------------------------------------

def _check_code(cfg: ModelConfig, codes: Tensor) -> None:
    if codes.data.ndim != 2 or codes.shape[1] != cfg.codeword_dim:
        raise ValueError(
            f"codeword width {codes.shape} does not match d={cfg.codeword_dim}")


def fold_points(params, cfg: ModelConfig, pts: Tensor, code_rows: Tensor,
                prefix: str = "fold") -> Tensor:
    """Point-wise folding: stage1([p; c]) -> y, stage2([y; c]) -> x in R^3."""
    y = _mlp(params, f"{prefix}.s1", nm.concat([pts, code_rows]),
             _mlp_depth(cfg, f"{prefix}.s1"))
    return _mlp(params, f"{prefix}.s2", nm.concat([y, code_rows]),
                _mlp_depth(cfg, f"{prefix}.s2"))


def tear_points(params, cfg: ModelConfig, u: Tensor, x: Tensor,
                code_rows: Tensor) -> Tensor:
    """Point-wise tearing: a 2D displacement added back onto u (residual)."""
    if u.shape[0] != x.shape[0]:
        raise ValueError(f"point counts differ: {u.shape[0]} vs {x.shape[0]}")
    t = _mlp(params, "tear.s1", nm.concat([u, x, code_rows]),
             _mlp_depth(cfg, "tear.s1"))
    t = _mlp(params, "tear.s2", nm.concat([t, x, code_rows]),
             _mlp_depth(cfg, "tear.s2"))
    return nm.add(u, t)


def torn_filtered(u1: Tensor, x2: Tensor, base: SparseGraph, cfg: GraphConfig,
                  lam: float) -> tuple[Tensor, SparseGraph]:
    """Differentiable torn-graph filter: tears the base graph on the current
    positions, applies (I - lam*L), and routes gradients both through the
    coordinates and through the Gaussian edge weights."""
    u_val = u1.data.astype(np.float64)
    x_val = x2.data.astype(np.float64)
    pos = u_val if cfg.mode == "2d" else np.hstack([u_val, x_val])
    torn = geo.tear_graph(base, pos, cfg)
    out = geo.graph_filter(x2.data, torn, lam)
    i, j = torn.edges[:, 0], torn.edges[:, 1]
    w = torn.weights

    def bwd(g):
        g64 = g.astype(np.float64)
        gx = g64 - lam * geo.laplacian_apply(torn, g64)
        if torn.num_edges:
            dx = x_val[i] - x_val[j]
            dg = g64[i] - g64[j]
            # d(out)/d(w_e) contracts to a scalar per edge
            s = -lam * np.sum(dg * dx, axis=1)
            coeff = (s * w / (cfg.eps * cfg.eps))[:, None]
            dpos = pos[i] - pos[j]
            gp = np.zeros_like(pos)
            np.add.at(gp, i, -coeff * dpos)
            np.add.at(gp, j, coeff * dpos)
            if u1.requires_grad:
                u1.grad += gp[:, :2].astype(u1.dtype)
            if cfg.mode != "2d" and x2.requires_grad:
                gx = gx + gp[:, 2:]
        if x2.requires_grad:
            x2.grad += gx.astype(x2.dtype)

    return nm.make_op(out, (u1, x2), bwd), torn


@dataclass
class DecodeResult:
    """All decoder intermediates for one scene."""

    variant: str
    grid: np.ndarray                 # u0
    torn_grids: list[Tensor]         # u1 (, u2)
    fold_outputs: list[Tensor]       # x1 (, x2, ...) in order of folding
    graph: SparseGraph | None
    filtered: Tensor | None
    out: Tensor

    @property
    def u1(self) -> Tensor | None:
        return self.torn_grids[0] if self.torn_grids else None

    @property
    def x1(self) -> Tensor:
        return self.fold_outputs[0]

    @property
    def x2(self) -> Tensor | None:
        """Final pre-filter fold (the middle fold of a 3-iteration decode
        is only reachable through ``fold_outputs``)."""
        return self.fold_outputs[-1] if len(self.fold_outputs) > 1 else None

    @property
    def x3(self) -> Tensor | None:
        return self.filtered

    def final_cloud(self) -> np.ndarray:
        return self.out.data


def decode_batch(params: dict[str, Tensor], cfg: ModelConfig,
                 codes: Tensor) -> list[DecodeResult]:
    """Decode a (B, d) codeword batch; heavy MLPs run fused across scenes,
    the per-scene torn graph and filter run on row slices."""
    _check_code(cfg, codes)
    grid = geo.make_grid(cfg.grid_dim)
    m = grid.shape[0]
    batch = codes.shape[0]
    dtype = codes.dtype
    u0 = Tensor(np.tile(grid, (batch, 1)).astype(dtype))
    code_rows = nm.repeat_interleave_rows(codes, m)

    if cfg.variant == "fold":
        x1 = fold_points(params, cfg, u0, code_rows)
        return _per_scene(cfg, grid, batch, m, folds=[x1], grids=[], out=x1)
    if cfg.variant == "cascade":
        x1 = fold_points(params, cfg, u0, code_rows)
        x2 = fold_points(params, cfg, x1, code_rows, prefix="fold2")
        return _per_scene(cfg, grid, batch, m, folds=[x1, x2], grids=[], out=x2)
    if cfg.variant == "tear_first":
        zeros3 = Tensor(np.zeros((batch * m, 3), dtype))
        u1 = tear_points(params, cfg, u0, zeros3, code_rows)
        x2 = fold_points(params, cfg, u1, code_rows)
        return _per_scene(cfg, grid, batch, m, folds=[x2], grids=[u1], out=x2)
    if cfg.variant in ("tear", "tear_nofilter"):
        x1 = fold_points(params, cfg, u0, code_rows)
        u1 = tear_points(params, cfg, u0, x1, code_rows)
        x2 = fold_points(params, cfg, u1, code_rows)
        return _per_scene(cfg, grid, batch, m, folds=[x1, x2], grids=[u1], out=x2)
    if cfg.variant == "tear3":
        x1 = fold_points(params, cfg, u0, code_rows)
        u1 = tear_points(params, cfg, u0, x1, code_rows)
        x2 = fold_points(params, cfg, u1, code_rows)
        u2 = tear_points(params, cfg, u1, x2, code_rows)
        x3 = fold_points(params, cfg, u2, code_rows)
        return _per_scene(cfg, grid, batch, m, folds=[x1, x2, x3],
                          grids=[u1, u2], out=x3)
    raise ValueError(f"unknown variant {cfg.variant!r}")


def _per_scene(cfg: ModelConfig, grid: np.ndarray, batch: int, m: int,
               folds: list[Tensor], grids: list[Tensor],
               out: Tensor) -> list[DecodeResult]:
    base = geo.grid_graph(grid, cfg.graph) if cfg.has_graph else None
    results = []
    for b in range(batch):
        lo, hi = b * m, (b + 1) * m
        scene_folds = [nm.slice_rows(t, lo, hi) for t in folds]
        scene_grids = [nm.slice_rows(t, lo, hi) for t in grids]
        graph = None
        filtered = None
        scene_out = nm.slice_rows(out, lo, hi)
        if cfg.has_graph:
            u_last = scene_grids[-1]
            x_last = scene_folds[-1]
            if cfg.has_filter:
                filtered, graph = torn_filtered(u_last, x_last, base,
                                                cfg.graph, cfg.filter_weight)
                scene_out = filtered
            else:
                pos = (u_last.data.astype(np.float64) if cfg.graph.mode == "2d"
                       else np.hstack([u_last.data.astype(np.float64),
                                       x_last.data.astype(np.float64)]))
                graph = geo.tear_graph(base, pos, cfg.graph)
        results.append(DecodeResult(cfg.variant, grid, scene_grids,
                                    scene_folds, graph, filtered, scene_out))
    return results


def decode(params: dict[str, Tensor], cfg: ModelConfig, code) -> DecodeResult:
    """Decode a single codeword ((d,) array or (1, d) tensor)."""
    if not isinstance(code, Tensor):
        code = Tensor(np.asarray(code).reshape(1, -1))
    return decode_batch(params, cfg, code)[0]


def decode_points(params: dict[str, Tensor], cfg: ModelConfig,
                  code: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """Map arbitrary 2D patch points through the decoder (no graph filter;
    off-grid samples carry no graph).  Used for surface resampling."""
    code = np.asarray(code).reshape(1, -1)
    pts2 = np.asarray(pts2, dtype=code.dtype)
    k = pts2.shape[0]
    if k == 0:
        return np.zeros((0, 3))
    code_rows = nm.repeat_interleave_rows(Tensor(code), k)
    u = Tensor(pts2)
    if cfg.variant == "fold":
        return fold_points(params, cfg, u, code_rows).data
    if cfg.variant == "cascade":
        x1 = fold_points(params, cfg, u, code_rows)
        return fold_points(params, cfg, x1, code_rows, prefix="fold2").data
    if cfg.variant == "tear_first":
        u1 = tear_points(params, cfg, u, Tensor(np.zeros((k, 3), u.dtype)),
                         code_rows)
        return fold_points(params, cfg, u1, code_rows).data
    x = fold_points(params, cfg, u, code_rows)
    rounds = 2 if cfg.variant == "tear3" else 1
    for _ in range(rounds):
        u = tear_points(params, cfg, u, x, code_rows)
        x = fold_points(params, cfg, u, code_rows)
    return x.data


def decode_mesh(result: DecodeResult, grid_dim: int) -> geo.QuadMesh:
    if result.graph is None:
        raise ValueError(f"variant {result.variant!r} produces no torn graph")
    return geo.extract_mesh(grid_dim, result.graph, result.out.data)
