import numpy as np
import pytest

from foldtear import data as dt
from foldtear import nets
from foldtear import numeric as nm
from foldtear import train as tr


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    dt.gen_dataset(root, "toy", seed=3, family="playground", train=6, test=3,
                   count=64, playground_dim=3)
    return dt.load_manifest(root / "toy")


def _cfg(stage, manifest, out_dir, variant="tear", epochs=2, lr=2e-4,
         seed=1, init=None):
    return tr.TrainConfig(
        stage=stage, model=nets.preset("tiny", variant=variant),
        manifest=manifest["_dir"], out_dir=str(out_dir), epochs=epochs,
        learning_rate=lr, batch_size=4, seed=seed, init_checkpoint=init)


def test_zero_epochs_checkpoint_is_initialization(tiny_dataset, tmp_path):
    summary = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "p0", epochs=0),
        tiny_dataset)
    loaded, _, meta = nm.load_checkpoint(summary["checkpoint"])
    fresh = nets.init_params(nets.preset("tiny", variant="fold"), seed=1)
    for k, p in fresh.items():
        np.testing.assert_array_equal(loaded[k], p.data)
    assert meta["best_epoch"] == 0


def test_pretrain_loss_decreases(tiny_dataset, tmp_path):
    summary = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "p", epochs=6, lr=1e-3),
        tiny_dataset)
    assert summary["history"][-1][1] < summary["history"][0][1]
    assert summary["best_loss"] <= summary["initial_loss"]


def test_resume_reproduces_logged_loss(tiny_dataset, tmp_path):
    first = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "a", epochs=3, lr=1e-3),
        tiny_dataset)
    resumed = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "b", epochs=0,
             init=first["checkpoint"]),
        tiny_dataset)
    assert resumed["initial_loss"] == first["best_loss"]


def test_finetune_warm_start_no_filter(tiny_dataset, tmp_path):
    pre = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "pre", epochs=3, lr=1e-3),
        tiny_dataset)
    fine = tr.run_training(
        _cfg("finetune", tiny_dataset, tmp_path / "fine",
             variant="tear_nofilter", epochs=0, init=pre["checkpoint"]),
        tiny_dataset)
    # zero-initialized tearing residual: step-0 loss equals the pretrain loss
    assert fine["initial_loss"] == pre["best_loss"]


def test_finetune_trains_tear_parameters(tiny_dataset, tmp_path):
    pre = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "pre2", epochs=1, lr=1e-3),
        tiny_dataset)
    fine = tr.run_training(
        _cfg("finetune", tiny_dataset, tmp_path / "fine2", variant="tear",
             epochs=1, lr=1e-3, init=pre["checkpoint"]),
        tiny_dataset)
    loaded, _, _ = nm.load_checkpoint(fine["checkpoint"])
    final = [k for k in loaded if k.startswith("tear.s2") and k.endswith(".w")]
    moved = any(np.abs(loaded[k]).max() > 0 for k in final)
    assert moved, "gradient never reached the tearing net"


def test_finetune_requires_checkpoint(tiny_dataset, tmp_path):
    with pytest.raises(ValueError, match="checkpoint"):
        _cfg("finetune", tiny_dataset, tmp_path / "x", epochs=1)


def test_finetune_architecture_mismatch(tiny_dataset, tmp_path):
    pre = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "pre3", epochs=0),
        tiny_dataset)
    bad = _cfg("finetune", tiny_dataset, tmp_path / "fine3", epochs=1,
               init=pre["checkpoint"])
    bad = tr.TrainConfig(
        stage="finetune",
        model=nets.preset("tiny", variant="tear", codeword_dim=12),
        manifest=bad.manifest, out_dir=bad.out_dir, epochs=1,
        learning_rate=1e-3, batch_size=4, seed=1,
        init_checkpoint=pre["checkpoint"])
    with pytest.raises(ValueError, match="architecture mismatch"):
        tr.run_training(bad, tiny_dataset)


def test_nonfinite_loss_aborts_with_checkpoint(tiny_dataset, tmp_path):
    summary = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "boom", epochs=4, lr=1e12),
        tiny_dataset)
    assert summary["aborted"]
    params, model, meta = tr.load_for_eval(summary["checkpoint"])
    assert np.all(np.isfinite(params["fold.s1.0.w"].data))
    assert meta.get("aborted")


def test_evaluate_checkpoint_deterministic(tiny_dataset, tmp_path):
    pre = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "pre4", epochs=1, lr=1e-3),
        tiny_dataset)
    row_a = tr.evaluate_checkpoint(pre["checkpoint"], tiny_dataset)
    row_b = tr.evaluate_checkpoint(pre["checkpoint"], tiny_dataset)
    assert row_a == row_b
    assert row_a["variant"] == "fold"
    assert float(row_a["CD"]) > 0


def test_evaluate_tear_variant_removes_isolated(tiny_dataset, tmp_path):
    pre = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "pre5", epochs=1, lr=1e-3),
        tiny_dataset)
    fine = tr.run_training(
        _cfg("finetune", tiny_dataset, tmp_path / "fine5", variant="tear",
             epochs=1, lr=1e-3, init=pre["checkpoint"]),
        tiny_dataset)
    row = tr.evaluate_checkpoint(fine["checkpoint"], tiny_dataset)
    assert row["variant"] == "tear"
    assert np.isfinite(float(row["CD"])) and np.isfinite(float(row["EMD"]))


def test_evaluate_at_other_grid_resolution(tiny_dataset, tmp_path):
    pre = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "pre6", epochs=1, lr=1e-3),
        tiny_dataset)
    fine = tr.run_training(
        _cfg("finetune", tiny_dataset, tmp_path / "fine6", variant="tear",
             epochs=0, init=pre["checkpoint"]),
        tiny_dataset)
    row = tr.evaluate_checkpoint(fine["checkpoint"], tiny_dataset,
                                 eval_grid_dim=5, eval_eps=0.5)
    assert row["variant"] == "tear"
    # the decode really ran at the requested resolution
    params, model, _ = tr.load_for_eval(fine["checkpoint"])
    from dataclasses import replace
    from foldtear.geometry import GraphConfig
    model = replace(model, grid_dim=5, graph=GraphConfig(eps=0.5))
    res = tr.reconstruct_one(params, model,
                             dt.load_split(tiny_dataset, "test")[0]["cloud"])
    assert res.out.shape == (25, 3)


def test_epoch_log_format(tiny_dataset, tmp_path):
    summary = tr.run_training(
        _cfg("pretrain", tiny_dataset, tmp_path / "log", epochs=2, lr=1e-3),
        tiny_dataset)
    lines = open(summary["log"]).read().splitlines()
    assert lines[0] == "epoch,loss,wall_time"
    assert len(lines) == 4  # header + init row + 2 epochs


def test_budget_presets():
    assert tr.budget("full", "pretrain") == (640, 2e-4)
    assert tr.budget("full", "finetune") == (480, 1e-6)
    with pytest.raises(ValueError):
        tr.budget("huge", "pretrain")
