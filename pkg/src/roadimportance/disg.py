"""Driver intention and semantics guidance.

The semantic map of the final frame is encoded into a guiding feature,
scaled by an intention mask chosen from the ego angular velocity, and
used as key/value for cross-attention from each object's spatial feature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, ModelConfig
from .layers import (MultiHeadAttention, build_backbone, grid_centers, roi_bin_centers, sinusoidal_encoding,
                     tokens, untokens)


class Intention(str, Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"


@dataclass
class IntentionMask:
    m: np.ndarray  # (H', W'); columns run left to right in the image
    kind: Intention
    a: float
    b: float


def build_masks(a: float, b: float, width: int, height: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left-turn, straight and right-turn masks of shape (height, width).

    Turning left emphasizes the right half, turning right the left half,
    going straight a centered band of ``width - 2*floor(0.3*width)`` columns
    (columns 3-6 for width 10).
    """
    if not b > a > 0:
        raise ConfigError(f"intention masks need b > a > 0, got a={a}, b={b}")
    half = width // 2
    m_l = np.full((height, width), a, dtype=np.float64)
    m_l[:, half:] = b
    m_r = m_l[:, ::-1].copy()
    outer = int(math.floor(0.3 * width))
    m_s = np.full((height, width), a, dtype=np.float64)
    m_s[:, outer:width - outer] = b
    return m_l, m_s, m_r


def intention_of(ego_velocity: float, beta: float) -> Intention:
    if not math.isfinite(ego_velocity):
        raise ValueError(f"ego angular velocity must be finite, got {ego_velocity}")
    if ego_velocity > beta:
        return Intention.LEFT
    if ego_velocity < -beta:
        return Intention.RIGHT
    return Intention.STRAIGHT


def select_mask(ego_velocity: float, beta: float, masks, a: float = float("nan"),
                b: float = float("nan")) -> IntentionMask:
    m_l, m_s, m_r = masks
    kind = intention_of(ego_velocity, beta)
    m = {Intention.LEFT: m_l, Intention.STRAIGHT: m_s, Intention.RIGHT: m_r}[kind]
    return IntentionMask(m, kind, a, b)


def fuse_intention_semantics(f_s: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Channel-broadcast product of (B, 2C, H', W') features with (B or 1, H', W') masks."""
    if m.dim() == 2:
        m = m.unsqueeze(0)
    if m.shape[-2:] != f_s.shape[-2:]:
        raise ValueError(f"mask {tuple(m.shape[-2:])} does not match feature map {tuple(f_s.shape[-2:])}")
    return f_s * m.unsqueeze(1).to(f_s.dtype)


class IntentionSemanticsGuidance(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c, r = cfg.channels, cfg.roi_size
        oc = cfg.ofe
        self.semantic_backbone = build_backbone(oc.backbone, c, oc.coord_channels, oc.bias)
        self.semantic_proj = nn.Conv2d(c, 2 * c, 1, bias=oc.bias)
        self.cross_attn = MultiHeadAttention(2 * c, cfg.heads)
        masks = np.stack(build_masks(cfg.disg.a, cfg.disg.b, r, r))
        self.register_buffer("masks", torch.from_numpy(masks).float(), persistent=False)

    def semantic_feature(self, seg: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) -> (B, 2C, R, R)."""
        x = self.semantic_proj(self.semantic_backbone(seg))
        return F.adaptive_avg_pool2d(x, self.cfg.roi_size)

    def intention_masks(self, ego_velocity: torch.Tensor) -> torch.Tensor:
        """(B,) angular velocities -> (B, R, R) masks."""
        beta = self.cfg.disg.beta
        index = [list(Intention).index(intention_of(float(e), beta)) for e in ego_velocity.tolist()]
        return self.masks[torch.tensor(index, dtype=torch.long, device=self.masks.device)]

    def position_encodings(self, boxes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Query encodings at each object's ROI bins, key encodings at the scene grid cells."""
        r, d = self.cfg.roi_size, 2 * self.cfg.channels
        q_pos = sinusoidal_encoding(roi_bin_centers(boxes, r, self.cfg.image_size), d)
        k_pos = sinusoidal_encoding(grid_centers(r, boxes.dtype, boxes.device), d).unsqueeze(0)
        return q_pos, k_pos

    def object_intention_semantics(self, f_os: torch.Tensor, f_is: torch.Tensor,
                                   boxes: torch.Tensor | None = None) -> torch.Tensor:
        """Cross-attention with ``f_os`` as query and per-object ``f_is`` as key/value, plus residual.

        ``boxes`` (N, 4) are the final-frame boxes used to place the query tokens in the image.
        """
        if f_os.shape[1:] != f_is.shape[1:]:
            raise ValueError(f"f_os {tuple(f_os.shape)} and f_is {tuple(f_is.shape)} disagree")
        r = f_os.shape[-1]
        q = tokens(f_os)
        kv = tokens(f_is)
        q_pos = k_pos = None
        if boxes is not None and self.cfg.disg.position_encoding:
            q_pos, k_pos = self.position_encodings(boxes)
        return untokens(self.cross_attn(q, kv, query_pos=q_pos, key_pos=k_pos), r, r) + f_os

    def forward(self, seg, ego_velocity, f_os, obj_clip, boxes=None):
        dc = self.cfg.disg
        b = seg.shape[0]
        c2, r = 2 * self.cfg.channels, self.cfg.roi_size
        if dc.use_semantics:
            f_s = self.semantic_feature(seg)
        else:
            f_s = seg.new_ones(b, c2, r, r)
        if dc.use_intention:
            m = self.intention_masks(ego_velocity).to(seg.dtype)
            f_is = fuse_intention_semantics(f_s, m)
        else:
            m = None
            f_is = f_s
        f_ois = self.object_intention_semantics(f_os, f_is[obj_clip], boxes)
        return f_s, m, f_is, f_ois
