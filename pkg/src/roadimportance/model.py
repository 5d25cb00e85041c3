"""Importance head, loss and the composed network."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .data.clips import ClipSample
from .disg import IntentionSemanticsGuidance
from .layers import linear_ln_relu
from .ofe import ObjectFeatureExtractor
from .trg import TrafficRuleGuidance

PROB_EPS = 1e-7


@dataclass
class Batch:
    frames: torch.Tensor      # (B, T, 3, S, S)
    flow: torch.Tensor        # (B, T, 3, S, S)
    seg: torch.Tensor         # (B, 3, S, S)
    ego: torch.Tensor         # (B,)
    lanes: torch.Tensor       # (B, 20, 4)
    boxes: torch.Tensor       # (N, T, 4)
    valid: torch.Tensor       # (N, T)
    obj_clip: torch.Tensor    # (N,)
    labels: torch.Tensor      # (N,)

    def to(self, dtype: torch.dtype) -> "Batch":
        kw = {}
        for f in fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v.to(dtype) if v.is_floating_point() else v
        return Batch(**kw)


def collate(clips: Sequence[ClipSample], dtype: torch.dtype = torch.float32) -> Batch:
    def t(x):
        return torch.as_tensor(np.asarray(x), dtype=dtype)

    obj_clip = np.concatenate([np.full(c.n_objects, i) for i, c in enumerate(clips)])
    return Batch(
        frames=t(np.stack([c.frames for c in clips])),
        flow=t(np.stack([c.flow for c in clips])),
        seg=t(np.stack([c.seg_map for c in clips])),
        ego=torch.tensor([c.ego_velocity for c in clips], dtype=torch.float64),
        lanes=t(np.stack([c.lanes.points for c in clips])),
        boxes=t(np.concatenate([c.boxes for c in clips])),
        valid=torch.from_numpy(np.concatenate([c.valid for c in clips])),
        obj_clip=torch.from_numpy(obj_clip).long(),
        labels=torch.from_numpy(np.concatenate([c.labels for c in clips])).long(),
    )


@dataclass
class ModelOutput:
    A: torch.Tensor           # (N,) probability of the important class
    probs: torch.Tensor       # (N, 2)
    logits: torch.Tensor      # (N, 2)
    f_v: torch.Tensor
    f_m: torch.Tensor
    f_os: torch.Tensor
    f_ot: torch.Tensor
    f_s: torch.Tensor | None
    mask: torch.Tensor | None
    f_is: torch.Tensor | None
    f_ois: torch.Tensor
    f_l: torch.Tensor | None
    f_ol_m: torch.Tensor | None
    p: torch.Tensor | None
    p_c: torch.Tensor | None
    f_ol: torch.Tensor


class ImportanceHead(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c2, r, h = 2 * cfg.channels, cfg.roi_size, cfg.hidden
        self.project = linear_ln_relu(c2 * r * r, h)
        self.mlp = nn.Sequential(nn.Linear(h, cfg.head_hidden), nn.ReLU(), nn.Linear(cfg.head_hidden, 2))

    def forward(self, f_ois: torch.Tensor, f_ol: torch.Tensor):
        if f_ois.shape[0] != f_ol.shape[0]:
            raise ValueError(f"f_ois has {f_ois.shape[0]} objects, f_ol has {f_ol.shape[0]}")
        x = self.project(f_ois.flatten(1))
        if x.shape != f_ol.shape:
            raise ValueError(f"projected f_ois {tuple(x.shape)} cannot be added to f_ol {tuple(f_ol.shape)}")
        logits = self.mlp(x + f_ol)
        probs = logits.softmax(dim=-1)
        return logits, probs, probs[:, 1]


def bce_term(A: torch.Tensor, labels: torch.Tensor, eps: float = PROB_EPS) -> torch.Tensor:
    p = A.clamp(eps, 1 - eps)
    y = labels.to(A.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p))


def focal_term(A: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0, balance: float = 0.25,
               eps: float = PROB_EPS) -> torch.Tensor:
    p = A.clamp(eps, 1 - eps)
    y = labels.to(A.dtype)
    p_t = y * p + (1 - y) * (1 - p)
    a_t = y * balance + (1 - y) * (1 - balance)
    return -a_t * (1 - p_t) ** gamma * torch.log(p_t)


def importance_loss(A: torch.Tensor, labels: torch.Tensor, gamma: float = 2.0, balance: float = 0.25,
                    eps: float = PROB_EPS) -> torch.Tensor:
    """Mean binary cross-entropy plus mean focal loss over objects."""
    if A.numel() == 0:
        raise ValueError("loss over zero objects is undefined")
    if A.shape != labels.shape:
        raise ValueError(f"{A.shape[0]} predictions but {labels.shape[0]} labels")
    return bce_term(A, labels, eps).mean() + focal_term(A, labels, gamma, balance, eps).mean()


class ImportanceModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.ofe = ObjectFeatureExtractor(cfg)
        self.disg = IntentionSemanticsGuidance(cfg)
        self.trg = TrafficRuleGuidance(cfg)
        self.head = ImportanceHead(cfg)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.cfg
        sf, f_os, f_ot = self.ofe(batch.frames, batch.flow, batch.boxes, batch.valid, batch.obj_clip)
        f_s = m = f_is = None
        if cfg.disg.enabled:
            f_s, m, f_is, f_ois = self.disg(batch.seg, batch.ego, f_os, batch.obj_clip, batch.boxes[:, -1])
        else:
            f_ois = f_os
        f_l = f_ol_m = p = p_c = None
        if cfg.trg.enabled:
            f_l, f_ol_m, p, p_c, f_ol = self.trg(batch.lanes, f_ot, batch.obj_clip)
        else:
            f_ol = f_ot
        logits, probs, A = self.head(f_ois, f_ol)
        return ModelOutput(A, probs, logits, sf.f_v, sf.f_m, f_os, f_ot, f_s, m, f_is, f_ois, f_l, f_ol_m, p,
                           p_c, f_ol)

    def loss(self, out: ModelOutput, batch: Batch) -> torch.Tensor:
        return importance_loss(out.A, batch.labels)

    @torch.no_grad()
    def predict(self, clips: Sequence[ClipSample]) -> ModelOutput:
        was_training = self.training
        self.eval()
        try:
            return self(collate(clips, self.dtype))
        finally:
            self.train(was_training)


def estimate_importance(head: ImportanceHead, f_ois: torch.Tensor, f_ol: torch.Tensor) -> torch.Tensor:
    return head(f_ois, f_ol)[2]


__all__ = ["Batch", "ImportanceHead", "ImportanceModel", "ModelOutput", "collate", "estimate_importance",
           "importance_loss"]
