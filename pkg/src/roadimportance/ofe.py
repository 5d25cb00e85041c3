"""Bottom-up object features: two backbone streams, ROI pooling, spatial and temporal branches."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
from torch import nn
from torchvision.ops import roi_align

from .config import ModelConfig
from .layers import MultiHeadAttention, build_backbone, linear_ln_relu, tokens, untokens

log = logging.getLogger(__name__)


@dataclass
class StreamFeatures:
    f_v: torch.Tensor  # (N, T, C, R, R)
    f_m: torch.Tensor  # (N, T, C, R, R)
    valid: torch.Tensor  # (N, T) bool


def sanitize_boxes(boxes: torch.Tensor, valid: torch.Tensor, min_size: float = 1.0) -> torch.Tensor:
    """Give every valid box at least ``min_size`` pixels per side; invalid entries get a unit box."""
    x1, y1, x2, y2 = boxes.unbind(-1)
    degenerate = valid & ((x2 - x1 < min_size) | (y2 - y1 < min_size))
    if bool(degenerate.any()):
        log.warning("clamping %d degenerate boxes to a %g-px minimum", int(degenerate.sum()), min_size)
    x2 = torch.maximum(x2, x1 + min_size)
    y2 = torch.maximum(y2, y1 + min_size)
    out = torch.stack([x1, y1, x2, y2], dim=-1)
    unit = torch.tensor([0.0, 0.0, min_size, min_size], dtype=boxes.dtype, device=boxes.device)
    return torch.where(valid.unsqueeze(-1), out, unit)


def roi_pool(maps: torch.Tensor, boxes: torch.Tensor, valid: torch.Tensor, obj_clip: torch.Tensor,
             roi_size: int, stride: int) -> torch.Tensor:
    """Per-object, per-frame ROI features.

    maps: (B*T, C, h, w) frame maps ordered clip-major; boxes: (N, T, 4) image
    pixels; returns (N, T, C, roi_size, roi_size) with zeros where ``valid`` is False.
    """
    n, t, _ = boxes.shape
    frame_index = (obj_clip.view(n, 1) * t + torch.arange(t, device=boxes.device).view(1, t)).to(maps.dtype)
    rois = torch.cat([frame_index.reshape(-1, 1), sanitize_boxes(boxes, valid).reshape(-1, 4).to(maps.dtype)], 1)
    pooled = roi_align(maps, rois, output_size=roi_size, spatial_scale=1.0 / stride, sampling_ratio=-1,
                       aligned=True)
    pooled = pooled.view(n, t, *pooled.shape[1:])
    return pooled * valid.view(n, t, 1, 1, 1).to(pooled.dtype)


def valid_time_average(f: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean over the time axis counting only valid frames."""
    w = valid.to(f.dtype).view(*valid.shape, 1, 1, 1)
    count = w.sum(dim=1).clamp(min=1.0)
    return (f * w).sum(dim=1) / count


class ObjectFeatureExtractor(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c, h, r = cfg.channels, cfg.hidden, cfg.roi_size
        oc = cfg.ofe
        self.video_backbone = build_backbone(oc.backbone, c, oc.coord_channels, oc.bias)
        self.motion_backbone = build_backbone(oc.backbone, c, oc.coord_channels, oc.bias)
        self.stride = self.video_backbone.stride
        self.spatial_attn = MultiHeadAttention(2 * c, cfg.heads)
        self.video_lstm = nn.LSTM(c * r * r, h, cfg.lstm_layers, batch_first=True)
        self.motion_lstm = nn.LSTM(c * r * r, h, cfg.lstm_layers, batch_first=True)
        self.temporal_attn = MultiHeadAttention(2 * h, cfg.heads)
        self.temporal_proj = linear_ln_relu(2 * h, h)

    def extract_stream_features(self, frames: torch.Tensor, flow: torch.Tensor, boxes: torch.Tensor,
                                valid: torch.Tensor, obj_clip: torch.Tensor) -> StreamFeatures:
        """frames/flow: (B, T, 3, S, S); boxes (N, T, 4); obj_clip (N,) clip index of each object."""
        b, t = frames.shape[:2]
        v_maps = self.video_backbone(frames.flatten(0, 1))
        m_maps = self.motion_backbone(flow.flatten(0, 1))
        r = self.cfg.roi_size
        f_v = roi_pool(v_maps, boxes, valid, obj_clip, r, self.stride)
        f_m = roi_pool(m_maps, boxes, valid, obj_clip, r, self.stride)
        return StreamFeatures(f_v, f_m, valid)

    def spatial_feature(self, sf: StreamFeatures) -> torch.Tensor:
        """(N, 2C, R, R): time-averaged streams, concatenated, attention over positions."""
        x = torch.cat([valid_time_average(sf.f_v, sf.valid), valid_time_average(sf.f_m, sf.valid)], dim=1)
        r = x.shape[-1]
        seq = tokens(x)
        out = self.spatial_attn(seq, seq)
        if self.cfg.ofe.spatial_residual:
            out = out + seq
        return untokens(out, r, r)

    def temporal_feature(self, sf: StreamFeatures) -> torch.Tensor:
        """(N, C'): per-stream LSTMs, concatenated, attention over time, last step, projection."""
        hv, _ = self.video_lstm(sf.f_v.flatten(2))
        hm, _ = self.motion_lstm(sf.f_m.flatten(2))
        seq = torch.cat([hv, hm], dim=-1)
        attended = self.temporal_attn(seq, seq)
        return self.temporal_proj(attended[:, -1])

    def forward(self, frames, flow, boxes, valid, obj_clip):
        sf = self.extract_stream_features(frames, flow, boxes, valid, obj_clip)
        n = boxes.shape[0]
        c, h, r = self.cfg.channels, self.cfg.hidden, self.cfg.roi_size
        if self.cfg.ofe.use_spatial:
            f_os = self.spatial_feature(sf)
        else:
            f_os = sf.f_v.new_zeros(n, 2 * c, r, r)
        if self.cfg.ofe.use_temporal:
            f_ot = self.temporal_feature(sf)
        else:
            f_ot = sf.f_v.new_zeros(n, h)
        return sf, f_os, f_ot
