"""Command-line entry point.

Every run resolves its settings from an optional JSON config file plus
flags (flags win), requires an explicit seed, and writes a run manifest
next to its outputs.  Exit codes: 0 ok, 2 usage, 3 unreadable/missing
file, 4 config or checkpoint mismatch, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as dt
from . import downstream as ds
from . import geometry as geo
from . import metrics as mt
from . import nets
from . import numeric as nm
from . import train as tr

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4

GRADCHECK_TOLERANCE = 1e-4


class ConfigError(ValueError):
    """Inconsistent configuration or checkpoint (exit code 4)."""


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc


def _resolve(args: argparse.Namespace, config: dict, key: str, default=None,
             required: bool = False):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is None:
        val = config.get(key, default)
    if required and val is None:
        raise ConfigError(f"missing required setting {key!r} "
                          "(pass a flag or put it in the config file)")
    return val


def _write_run_manifest(out_dir: Path, command: str, resolved: dict,
                        outputs: list[str], started: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": resolved,
        "seed": resolved.get("seed"),
        "tool_version": __version__,
        "outputs": outputs,
        "wall_time": round(time.perf_counter() - started, 3),
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _model_config(args, config) -> nets.ModelConfig:
    preset_name = _resolve(args, config, "model-preset", default="desk")
    variant = _resolve(args, config, "variant", default="tear")
    try:
        return nets.preset(preset_name, variant=variant)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    preset = _resolve(args, config, "preset", required=True)
    manifest = dt.dataset_from_preset(out, preset, seed=seed)
    n_files = sum(len(v) for v in manifest["splits"].values())
    print(f"synth: wrote {n_files} clouds for preset {preset!r} under {out}")
    _write_run_manifest(out / preset, "synth",
                        {"seed": seed, "preset": preset, "out": str(out)},
                        [f"{preset}/manifest.json"], started)
    return EXIT_OK


def cmd_train(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    stage = _resolve(args, config, "stage", required=True)
    dataset = _resolve(args, config, "dataset", required=True)
    model = _model_config(args, config)
    budget_name = _resolve(args, config, "budget", default="desk")
    try:
        epochs, lr = tr.budget(budget_name, stage)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    epochs = int(_resolve(args, config, "epochs", default=epochs))
    lr = float(_resolve(args, config, "learning-rate", default=lr))
    batch = int(_resolve(args, config, "batch-size", default=32))
    init = _resolve(args, config, "init")
    try:
        cfg = tr.TrainConfig(stage=stage, model=model, manifest=dataset,
                             out_dir=str(out), epochs=epochs,
                             learning_rate=lr, batch_size=batch, seed=seed,
                             init_checkpoint=init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    summary = tr.run_training(cfg)
    if summary["aborted"]:
        print(f"train: aborted ({summary['aborted']}); "
              f"last good checkpoint kept at {summary['checkpoint']}")
    print(f"train: {stage} {summary['variant']} loss "
          f"{summary['initial_loss']:.6g} -> {summary['best_loss']:.6g} "
          f"(best epoch {summary['best_epoch']})")
    _write_run_manifest(out, "train",
                        {"seed": seed, "stage": stage, "dataset": dataset,
                         "variant": model.variant, "epochs": epochs,
                         "learning-rate": lr, "batch-size": batch,
                         "init": init, "out": str(out)},
                        ["checkpoint.npz", "train_log.csv"], started)
    return EXIT_OK


def cmd_eval(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    dataset = _resolve(args, config, "dataset", required=True)
    checkpoints = args.checkpoint or config.get("checkpoints")
    if not checkpoints:
        raise ConfigError("eval needs at least one --checkpoint")
    split = _resolve(args, config, "split", default="test")
    eval_grid = _resolve(args, config, "eval-grid")
    eval_eps = _resolve(args, config, "eval-eps")
    manifest = dt.load_manifest(dataset)
    rows = [tr.evaluate_checkpoint(
                ck, manifest, split=split, eval_seed=seed,
                eval_grid_dim=int(eval_grid) if eval_grid else None,
                eval_eps=float(eval_eps) if eval_eps else None)
            for ck in checkpoints]
    out.mkdir(parents=True, exist_ok=True)
    mt.write_metrics_report(out / "metrics.csv", rows)
    for row in rows:
        print(f"eval: {row['dataset']} {row['variant']} CD={row['CD']} "
              f"EMD={row['EMD']}")
    _write_run_manifest(out, "eval",
                        {"seed": seed, "dataset": dataset, "split": split,
                         "checkpoints": list(checkpoints),
                         "eval-grid": eval_grid, "eval-eps": eval_eps,
                         "out": str(out)},
                        ["metrics.csv"], started)
    return EXIT_OK


def cmd_reconstruct(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    dataset = _resolve(args, config, "dataset", required=True)
    ckpt = _resolve(args, config, "checkpoint", required=True)
    split = _resolve(args, config, "split", default="test")
    indices = args.index if args.index else config.get("indices", [0])
    manifest = dt.load_manifest(dataset)
    items = dt.load_split(manifest, split)
    params, model, _ = tr.load_for_eval(ckpt)
    outputs = []
    for idx in indices:
        if not (0 <= idx < len(items)):
            raise ConfigError(f"scene index {idx} outside the {split!r} split "
                              f"of size {len(items)}")
        item = items[idx]
        scene_dir = out / f"scene_{idx:05d}"
        scene_dir.mkdir(parents=True, exist_ok=True)
        res = tr.reconstruct_one(params, model, item["cloud"])
        m = res.out.shape[0]
        dt.ply_write(scene_dir / "input.ply", item["cloud"],
                     item["point_labels"], attr_name="object")
        dt.points2_csv_write(scene_dir / "u0.csv", res.grid)
        # x1 = trial fold, x2 = final fold, x3 = filtered; tear_first has
        # no trial fold, so its single fold output is the x2 slot
        clouds = {}
        if model.variant == "tear_first":
            clouds["x2"] = res.fold_outputs[0].data
        else:
            clouds["x1"] = res.fold_outputs[0].data
            if len(res.fold_outputs) > 1:
                clouds["x2"] = res.fold_outputs[-1].data
        if res.filtered is not None:
            clouds["x3"] = res.filtered.data
        for name in ("x1", "x2", "x3"):
            if name in clouds:
                dt.ply_write(scene_dir / f"{name}.ply", clouds[name],
                             np.arange(m), attr_name="gridindex")
        if res.u1 is not None:
            dt.points2_csv_write(scene_dir / "u1.csv", res.u1.data)
        if res.graph is not None:
            geo.graph_to_csv(res.graph, scene_dir / "torn_graph.csv")
            geo.mesh_to_obj(nets.decode_mesh(res, model.grid_dim),
                            scene_dir / "mesh.obj")
        dt.ply_write(scene_dir / "out.ply", res.out.data, np.arange(m),
                     attr_name="gridindex")
        outputs.append(str(scene_dir.relative_to(out)))
    print(f"reconstruct: wrote {len(outputs)} scene dumps under {out}")
    _write_run_manifest(out, "reconstruct",
                        {"seed": seed, "dataset": dataset, "split": split,
                         "checkpoint": ckpt, "indices": list(indices),
                         "out": str(out)}, outputs, started)
    return EXIT_OK


def cmd_resample(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    dataset = _resolve(args, config, "dataset", required=True)
    ckpt = _resolve(args, config, "checkpoint", required=True)
    split = _resolve(args, config, "split", default="test")
    index = int(_resolve(args, config, "index", default=0))
    count = int(_resolve(args, config, "count", required=True))
    manifest = dt.load_manifest(dataset)
    items = dt.load_split(manifest, split)
    params, model, _ = tr.load_for_eval(ckpt)
    if not (0 <= index < len(items)):
        raise ConfigError(f"scene index {index} outside the {split!r} split")
    res = tr.reconstruct_one(params, model, items[index]["cloud"])
    if res.graph is not None:
        mask = geo.alive_faces(model.grid_dim, res.graph)
    else:
        mask = np.ones((model.grid_dim - 1) ** 2, dtype=bool)
    code = nets.encode(params, model,
                       items[index]["cloud"].astype(np.float32)).data[0]
    cloud = geo.resample_surface(
        lambda pts: nets.decode_points(params, model, code, pts),
        model.grid_dim, mask, count, np.random.default_rng(seed))
    out.mkdir(parents=True, exist_ok=True)
    dt.ply_write(out / "resampled.ply", cloud)
    print(f"resample: kept {cloud.shape[0]} samples "
          f"({int(mask.sum())}/{mask.size} faces alive)")
    _write_run_manifest(out, "resample",
                        {"seed": seed, "dataset": dataset, "split": split,
                         "checkpoint": ckpt, "index": index, "count": count,
                         "out": str(out)}, ["resampled.ply"], started)
    return EXIT_OK


def cmd_codes(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    dataset = _resolve(args, config, "dataset", required=True)
    ckpt = _resolve(args, config, "checkpoint", required=True)
    split = _resolve(args, config, "split", default="test")
    manifest = dt.load_manifest(dataset)
    table = ds.extract_codes(ckpt, manifest, split=split)
    out.mkdir(parents=True, exist_ok=True)
    ds.table_to_csv(table, out / "codewords.csv")
    print(f"codes: wrote {len(table.scene_ids)} codewords to "
          f"{out / 'codewords.csv'}")
    _write_run_manifest(out, "codes",
                        {"seed": seed, "dataset": dataset, "split": split,
                         "checkpoint": ckpt, "out": str(out)},
                        ["codewords.csv"], started)
    return EXIT_OK


def cmd_count(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    codes_path = _resolve(args, config, "codes", required=True)
    variant = _resolve(args, config, "variant", default="unknown")
    table = ds.table_from_csv(codes_path)
    counting = ds.count_cv(table, seed=seed)
    presence = ds.presence_cv(table, shape="torus", seed=seed)
    rows = [
        {"task": "count", "variant": variant, "metric": "mae",
         "value": f"{counting['mae']:.10g}", "seed": seed},
        {"task": "count", "variant": variant, "metric": "mae_x10",
         "value": f"{counting['mae_x10']:.10g}", "seed": seed},
        {"task": "count", "variant": variant, "metric": "constant_mae",
         "value": f"{counting['constant_mae']:.10g}", "seed": seed},
        {"task": "count", "variant": variant, "metric": "chance_mae",
         "value": f"{counting['chance_mae']:.10g}", "seed": seed},
        # synthetic stand-in for the designated-object detection task
        {"task": "presence_torus", "variant": variant, "metric": "accuracy",
         "value": f"{presence['accuracy']:.10g}", "seed": seed},
        {"task": "presence_torus", "variant": variant,
         "metric": "majority_accuracy",
         "value": f"{presence['majority_accuracy']:.10g}", "seed": seed},
    ]
    out.mkdir(parents=True, exist_ok=True)
    ds.write_results_csv(rows, out / "results.csv")
    print(f"count: mae={counting['mae']:.4g} "
          f"(constant {counting['constant_mae']:.4g}, "
          f"chance {counting['chance_mae']:.4g})")
    _write_run_manifest(out, "count",
                        {"seed": seed, "codes": str(codes_path),
                         "variant": variant, "out": str(out)},
                        ["results.csv"], started)
    return EXIT_OK


def cmd_dk(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    out = Path(_resolve(args, config, "out", required=True))
    codes_path = _resolve(args, config, "codes", required=True)
    table = ds.table_from_csv(codes_path)
    rows = ds.dk_analysis(table)
    out.mkdir(parents=True, exist_ok=True)
    ds.write_dk_csv(rows, out / "dk.csv")
    print("dk: " + "  ".join(f"k={r['k']}:{r['d_norm']:.3f}" for r in rows))
    _write_run_manifest(out, "dk",
                        {"seed": seed, "codes": str(codes_path),
                         "out": str(out)}, ["dk.csv"], started)
    return EXIT_OK


def cmd_gradcheck(args, config) -> int:
    started = time.perf_counter()
    seed = int(_resolve(args, config, "seed", required=True))
    preset_name = _resolve(args, config, "model-preset", default="tiny")
    n_seeds = int(_resolve(args, config, "seeds", default=20))
    entries = int(_resolve(args, config, "entries", default=4))
    worst = 0.0
    for variant in nets.VARIANTS:
        cfg = nets.preset(preset_name, variant=variant)
        variant_worst = 0.0
        for s in range(n_seeds):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
            params = nets.init_params(cfg, seed=seed + s, dtype=np.float64)
            cloud = rng.normal(size=(10, 3))

            def forward():
                codes = nets.encode_batch(params, cfg, cloud[None])
                res = nets.decode_batch(params, cfg, codes)[0]
                return mt.chamfer_aug(cloud, res.out)

            err = nm.finite_difference_check(
                params, forward, h=1e-5, max_entries_per_param=entries,
                rng=rng)
            variant_worst = max(variant_worst, err)
        print(f"gradcheck: {variant:<14} max rel err {variant_worst:.3e}")
        worst = max(worst, variant_worst)
    elapsed = time.perf_counter() - started
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"gradcheck: overall max rel err {worst:.3e} over {n_seeds} seeds "
          f"({elapsed:.1f}s): {'PASS' if ok else 'FAIL'}")
    if args.out or config.get("out"):
        out = Path(_resolve(args, config, "out"))
        _write_run_manifest(out, "gradcheck",
                            {"seed": seed, "model-preset": preset_name,
                             "seeds": n_seeds, "entries": entries,
                             "max_rel_err": worst, "out": str(out)},
                            [], started)
    return EXIT_OK if ok else EXIT_INTERNAL


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foldtear",
        description="Point-cloud autoencoder with patch folding, graph "
                    "tearing, and graph-filter smoothing.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, help="master seed (required)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--preset", help=f"one of {sorted(dt.DATASET_PRESETS)}")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="pretrain or finetune a model")
    common(p)
    p.add_argument("--stage", choices=["pretrain", "finetune"])
    p.add_argument("--dataset", help="dataset directory (with manifest.json)")
    p.add_argument("--model-preset", choices=sorted(nets.MODEL_PRESETS))
    p.add_argument("--variant", choices=nets.VARIANTS)
    p.add_argument("--budget", choices=sorted(tr.BUDGET_PRESETS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--init", help="checkpoint to start from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="reconstruction metrics over a split")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--checkpoint", action="append")
    p.add_argument("--eval-grid", type=int,
                   help="decode at this patch resolution instead of the "
                        "trained one (point-wise nets are resolution-free)")
    p.add_argument("--eval-eps", type=float,
                   help="kernel width paired with --eval-grid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct",
                       help="dump decoder intermediates for chosen scenes")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--checkpoint")
    p.add_argument("--index", type=int, action="append")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("resample",
                       help="resample a reconstruction, skipping torn faces")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--checkpoint")
    p.add_argument("--index", type=int)
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("codes", help="extract codewords into a CSV table")
    common(p)
    p.add_argument("--dataset")
    p.add_argument("--split")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_codes)

    p = sub.add_parser("count", help="object counting from codewords")
    common(p)
    p.add_argument("--codes", help="codewords.csv from the codes subcommand")
    p.add_argument("--variant")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("dk", help="per-count feature distance curve")
    common(p)
    p.add_argument("--codes")
    p.set_defaults(func=cmd_dk)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every variant")
    common(p)
    p.add_argument("--model-preset", choices=sorted(nets.MODEL_PRESETS))
    p.add_argument("--seeds", type=int)
    p.add_argument("--entries", type=int)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"foldtear: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, NotADirectoryError, dt.PlyParseError) as exc:
        print(f"foldtear: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"foldtear: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"foldtear: invalid configuration or checkpoint: {exc}",
              file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"foldtear: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
