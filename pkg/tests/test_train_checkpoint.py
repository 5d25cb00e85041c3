import csv
import math

import numpy as np
import pytest
import torch

from roadimportance.checkpoint import Checkpoint, CheckpointError
from roadimportance.config import ConfigError, TrainConfig, model_config
from roadimportance.model import ImportanceModel, collate
from roadimportance.data import load_dataset
from roadimportance.train import TrainingDiverged, lr_at, train, training_clips


def _tc(**kw):
    base = dict(optimizer="adam", lr=1e-3, weight_decay=0.0, batch_size=4, epochs=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, micro_cfg, syn_clips):
    torch.manual_seed(1)
    model = ImportanceModel(micro_cfg).eval()
    ckpt = Checkpoint.from_model(model, _tc(), history=[{"epoch": 1, "loss": 0.5}])
    path = ckpt.save(tmp_path / "m.npz")
    loaded = Checkpoint.load(path)
    assert loaded.model_config == micro_cfg
    assert loaded.train_config == _tc()
    assert loaded.history == [{"epoch": 1, "loss": 0.5}]
    assert loaded.normalization["mean"] == list(micro_cfg.mean)
    for k, v in ckpt.params.items():
        assert loaded.params[k].dtype.str in ("<f4", "<i8", "|b1", "<f8")
        np.testing.assert_array_equal(loaded.params[k], v)
    rebuilt = loaded.build_model().eval()
    with torch.no_grad():
        a = model.predict(syn_clips[:2])
        b = rebuilt.predict(syn_clips[:2])
    assert torch.equal(a.A, b.A) and torch.equal(a.logits, b.logits)


def test_shape_mismatch_names_module(tmp_path, micro_cfg):
    ckpt = Checkpoint.from_model(ImportanceModel(micro_cfg), _tc())
    ckpt.params["head.mlp.2.weight"] = np.zeros((3, 16), np.float32)
    with pytest.raises(CheckpointError, match=r"head\.mlp\.2\.weight"):
        ckpt.build_model()
    del ckpt.params["head.mlp.2.weight"]
    with pytest.raises(CheckpointError, match="missing"):
        ckpt.build_model()


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, a=np.zeros(3))
    with pytest.raises(CheckpointError):
        Checkpoint.load(path)


def test_cosine_schedule():
    tc = TrainConfig(lr=0.1, epochs=1)
    assert lr_at(0, 10, tc) == 0.1
    assert lr_at(5, 10, tc) == pytest.approx(0.05)
    assert lr_at(10, 10, tc) == pytest.approx(0.0, abs=1e-15)
    assert lr_at(3, 10, TrainConfig(lr=0.1, epochs=1, schedule="constant")) == 0.1


@pytest.mark.parametrize("kw", [dict(epochs=None), dict(optimizer="rmsprop"), dict(precision="half"),
                                dict(momentum=1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        _tc(**kw).validate()


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_lr_leaves_parameters_unchanged(micro_cfg, syn_clips, optimizer):
    torch.manual_seed(0)
    initial = {k: v.clone() for k, v in ImportanceModel(micro_cfg).state_dict().items()}
    losses = []
    ckpt = train(syn_clips[:4], micro_cfg, _tc(lr=0.0, optimizer=optimizer, epochs=2, batch_size=4),
                 on_step=lambda s, l: losses.append(l))
    for k, v in initial.items():
        np.testing.assert_array_equal(ckpt.params[k], v.numpy())
    assert losses[0] == losses[1]


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_resume_reproduces_uninterrupted_run(tmp_path, micro_cfg, syn_clips, optimizer):
    tc = _tc(optimizer=optimizer, lr=1e-3 if optimizer == "adam" else 1e-2, epochs=3)
    full = []
    train(syn_clips, micro_cfg, tc, on_step=lambda s, l: full.append((s, l)))
    first = []
    part = train(syn_clips, micro_cfg, tc, stop_after=1, on_step=lambda s, l: first.append((s, l)))
    part = Checkpoint.load(part.save(tmp_path / "part.npz"))
    rest = []
    train(syn_clips, micro_cfg, tc, resume=part, on_step=lambda s, l: rest.append((s, l)))
    assert first + rest == full


def test_seeded_runs_are_identical(micro_cfg, syn_clips):
    runs = []
    for _ in range(2):
        losses = []
        train(syn_clips, micro_cfg, _tc(), on_step=lambda s, l: losses.append(l))
        runs.append(losses)
    assert runs[0] == runs[1]


def test_log_csv_has_metric_columns(tmp_path, micro_cfg, syn_clips):
    ckpt = train(syn_clips[:6], micro_cfg, _tc(epochs=2), val_clips=syn_clips[6:], log_path=tmp_path / "log.csv")
    rows = list(csv.DictReader((tmp_path / "log.csv").open()))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert set(rows[0]) == {"epoch", "loss", "AP", "F1", "Acc"}
    assert all(0 <= float(r["Acc"]) <= 1 for r in rows)
    assert len(ckpt.history) == 2 and ckpt.epoch == 2


def test_divergence_aborts_with_diagnostic(micro_cfg, syn_clips):
    with pytest.raises(TrainingDiverged, match="non-finite loss"):
        train(syn_clips[:4], micro_cfg, _tc(optimizer="sgd", lr=1e30, momentum=0.0, epochs=3))


def test_float64_training(micro_cfg, syn_clips):
    ckpt = train(syn_clips[:2], micro_cfg, _tc(precision="float64", epochs=1, batch_size=2))
    assert all(v.dtype == np.float64 for k, v in ckpt.params.items() if "num_batches" not in k)
    assert math.isfinite(ckpt.history[0]["loss"])


def test_collate_offsets_objects(syn_clips):
    batch = collate(syn_clips[:3])
    counts = [c.n_objects for c in syn_clips[:3]]
    assert batch.boxes.shape[0] == sum(counts)
    assert batch.obj_clip.tolist() == sum(([i] * n for i, n in enumerate(counts)), [])
    assert batch.ego.dtype == torch.float64


# loss per epoch over the first five epochs of the seeded benchmark run
RECORDED_LOSSES = [0.72257, 0.63275, 0.36482, 0.13027, 0.05671]


@pytest.mark.slow
def test_benchmark_loss_decreases_over_first_epochs(bench_root, bench_run):
    clips = training_clips(load_dataset(bench_root, "train"), bench_run.model, bench_run.train_stride,
                           bench_run.hflip)
    ckpt = train(clips, bench_run.model, bench_run.train, stop_after=5)
    losses = [h["loss"] for h in ckpt.history]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    np.testing.assert_allclose(losses, RECORDED_LOSSES, rtol=1e-3)
