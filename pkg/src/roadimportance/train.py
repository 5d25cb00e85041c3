"""Training loop: SGD with momentum (or Adam), cosine learning rate, soft lane gate."""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig
from .data.clips import ClipSample, clip_end_frames, sample_clip
from .data.records import SceneRecord
from .metrics import accuracy, average_precision, f1_score
from .model import ImportanceModel, collate

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "loss", "AP", "F1", "Acc")


class TrainingDiverged(RuntimeError):
    pass


def torch_dtype(precision: str) -> torch.dtype:
    return torch.float64 if precision == "float64" else torch.float32


def lr_at(step: int, total_steps: int, tc: TrainConfig) -> float:
    if tc.schedule == "constant" or total_steps <= 1:
        return tc.lr
    return 0.5 * tc.lr * (1.0 + math.cos(math.pi * step / total_steps))


def make_optimizer(model: torch.nn.Module, tc: TrainConfig) -> torch.optim.Optimizer:
    if tc.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=tc.lr, momentum=tc.momentum, weight_decay=tc.weight_decay)


def restore_optimizer(optimizer: torch.optim.Optimizer, model: torch.nn.Module, state: dict[str, np.ndarray],
                      dtype: torch.dtype) -> None:
    """Inverse of the ``name/key`` flattening done by :meth:`Checkpoint.from_model`."""
    for name, p in model.named_parameters():
        entries = {k.split("/", 1)[1]: v for k, v in state.items() if k.split("/", 1)[0] == name}
        if not entries:
            continue
        restored = {}
        for key, arr in entries.items():
            t = torch.from_numpy(np.array(arr, dtype=arr.dtype.newbyteorder("=")))
            restored[key] = t if key == "step" else t.to(dtype)
        optimizer.state[p] = restored


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def training_clips(scenes: Sequence[SceneRecord], cfg: ModelConfig, stride: int = 10,
                   hflip: bool = False) -> list[ClipSample]:
    """Clips ending at every ``stride``-th annotated frame, optionally with mirrored copies."""
    clips = []
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        for t in clip_end_frames(scene, cfg.clip_len, stride):
            for flip in ((False, True) if hflip else (False,)):
                clips.append(sample_clip(scene, t, cfg.clip_len, cfg.image_size, cfg.mean, cfg.std, hflip=flip))
    return clips


def score_clips(model: ImportanceModel, clips: Sequence[ClipSample], batch_size: int = 8):
    scores, labels = [], []
    for i in range(0, len(clips), batch_size):
        chunk = clips[i:i + batch_size]
        out = model.predict(chunk)
        scores.append(out.A.double().numpy())
        labels.append(np.concatenate([c.labels for c in chunk]))
    return np.concatenate(scores), np.concatenate(labels)


def quick_metrics(model: ImportanceModel, clips: Sequence[ClipSample]) -> dict[str, float]:
    scores, labels = score_clips(model, clips)
    ap = average_precision(scores, labels) if labels.any() else float("nan")
    return {"AP": ap, "F1": f1_score(scores, labels), "Acc": accuracy(scores, labels)}


def train(
    clips: Sequence[ClipSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    val_clips: Sequence[ClipSample] | None = None,
    log_path: str | Path | None = None,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> Checkpoint:
    """Fit the model on ``clips``; returns the final checkpoint.

    ``stop_after`` ends the run early after that many epochs in total (the
    schedule still spans ``train_cfg.epochs``), which is how interrupted
    runs are reproduced. ``on_step(step, loss)`` observes every update.
    """
    train_cfg.validate()
    if not clips:
        raise ValueError("training needs at least one clip")
    dtype = torch_dtype(train_cfg.precision)
    torch.manual_seed(train_cfg.seed)
    model = ImportanceModel(model_cfg).to(dtype)
    optimizer = make_optimizer(model, train_cfg)
    start_epoch, step, history = 0, 0, []
    if resume is not None:
        model = resume.build_model().to(dtype)
        optimizer = make_optimizer(model, train_cfg)
        restore_optimizer(optimizer, model, resume.optimizer, dtype)
        start_epoch, step, history = resume.epoch, resume.step, list(resume.history)

    n_batches = math.ceil(len(clips) / train_cfg.batch_size)
    total_steps = train_cfg.epochs * n_batches
    end_epoch = train_cfg.epochs if stop_after is None else min(stop_after, train_cfg.epochs)

    writer = None
    fh = None
    if log_path is not None:
        log_path = Path(log_path)
        fh = log_path.open("a" if resume is not None else "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        if resume is None:
            writer.writeheader()
    try:
        for epoch in range(start_epoch, end_epoch):
            model.train()
            losses = []
            for idx in epoch_batches(len(clips), train_cfg.batch_size, train_cfg.seed, epoch):
                batch = collate([clips[i] for i in idx], dtype)
                lr = lr_at(step, total_steps, train_cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                out = model(batch)
                loss = model.loss(out, batch)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}, lr {lr:g}")
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                losses.append(loss.item())
                if on_step is not None:
                    on_step(step, loss.item())
                step += 1
            row = {"epoch": epoch + 1, "loss": float(np.mean(losses))}
            if val_clips:
                row.update(quick_metrics(model, val_clips))
            history.append(row)
            log.info("epoch %d loss %.5f %s", epoch + 1, row["loss"],
                     " ".join(f"{k} {row[k]:.3f}" for k in ("AP", "F1", "Acc") if k in row))
            if writer is not None:
                writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    model.eval()
    return Checkpoint.from_model(model, train_cfg, optimizer, end_epoch, step, history)
