"""Shared building blocks: multi-head attention and image backbones."""
from __future__ import annotations

import math

import torch
from torch import nn


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over token sequences ``(B, L, D)``.

    ``mode`` is a test hook: ``"identity"`` returns the query unchanged and
    ``"zero"`` returns zeros, which isolates the surrounding residual paths.
    """

    def __init__(self, dim: int, heads: int, bias: bool = True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q_proj = nn.Linear(dim, dim, bias=bias)
        self.k_proj = nn.Linear(dim, dim, bias=bias)
        self.v_proj = nn.Linear(dim, dim, bias=bias)
        self.out_proj = nn.Linear(dim, dim, bias=bias)
        self.mode = "normal"
        self.last_weights: torch.Tensor | None = None
        self.keep_weights = False

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.dim // self.heads).transpose(1, 2)

    def forward(self, query: torch.Tensor, key: torch.Tensor, value: torch.Tensor | None = None,
                query_pos: torch.Tensor | None = None, key_pos: torch.Tensor | None = None) -> torch.Tensor:
        """``query_pos``/``key_pos`` are added to queries and keys only, never to values."""
        if self.mode == "identity":
            return query
        if self.mode == "zero":
            return torch.zeros_like(query)
        value = key if value is None else value
        q = self._split(self.q_proj(query if query_pos is None else query + query_pos))
        k = self._split(self.k_proj(key if key_pos is None else key + key_pos))
        v = self._split(self.v_proj(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        weights = scores.softmax(dim=-1)
        if self.keep_weights:
            self.last_weights = weights.detach()
        out = (weights @ v).transpose(1, 2).reshape(query.shape[0], query.shape[1], self.dim)
        return self.out_proj(out)


class TinyBackbone(nn.Module):
    """Three stride-2 conv stages ending in ``channels`` maps (overall stride 8).

    Each stage is conv, group norm, ReLU. With ``bias=False`` the norms carry
    no affine shift, so a zero image maps to zero features (given no coordinate planes).
    """

    stride = 8

    def __init__(self, channels: int = 512, coord_channels: bool = True, bias: bool = True):
        super().__init__()
        self.coord_channels = coord_channels
        widths = (max(channels // 4, 8), max(channels // 2, 8), channels)
        c_in = 3 + (2 if coord_channels else 0)
        layers = []
        for w in widths:
            layers += [nn.Conv2d(c_in, w, 3, stride=2, padding=1, bias=False),
                       nn.GroupNorm(min(8, w), w, affine=bias), nn.ReLU(inplace=True)]
            c_in = w
        self.body = nn.Sequential(*layers)
        self.out_channels = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.coord_channels:
            b, _, h, w = x.shape
            ys = torch.linspace(-1, 1, h, dtype=x.dtype, device=x.device).view(1, 1, h, 1).expand(b, 1, h, w)
            xs = torch.linspace(-1, 1, w, dtype=x.dtype, device=x.device).view(1, 1, 1, w).expand(b, 1, h, w)
            x = torch.cat([x, xs, ys], dim=1)
        return self.body(x)


class ResNet18Backbone(nn.Module):
    """torchvision ResNet18 without the pooling/FC head (stride 32, 512 channels)."""

    stride = 32

    def __init__(self, channels: int = 512):
        super().__init__()
        from torchvision.models import resnet18

        net = resnet18(weights=None)
        self.body = nn.Sequential(*list(net.children())[:-2])
        self.proj = nn.Identity() if channels == 512 else nn.Conv2d(512, channels, 1)
        self.out_channels = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(self.body(x))


def build_backbone(kind: str, channels: int, coord_channels: bool = True, bias: bool = True) -> nn.Module:
    if kind == "tiny":
        return TinyBackbone(channels, coord_channels, bias)
    if kind == "resnet18":
        return ResNet18Backbone(channels)
    raise ValueError(f"unknown backbone {kind!r}")


def tokens(x: torch.Tensor) -> torch.Tensor:
    """(B, D, H, W) -> (B, H*W, D), row-major positions."""
    return x.flatten(2).transpose(1, 2)


def untokens(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return x.transpose(1, 2).reshape(x.shape[0], x.shape[2], h, w)


def linear_ln_relu(d_in: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_out), nn.LayerNorm(d_out), nn.ReLU())


def sinusoidal_encoding(xy: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed Fourier features of normalized (x, y) positions ``(..., 2)`` -> ``(..., dim)``.

    Half the channels encode x, half y; frequencies are geometric from 1 to 64 cycles.
    """
    if dim % 4:
        raise ValueError(f"position encoding width {dim} must be divisible by 4")
    n = dim // 4
    freqs = torch.logspace(0, math.log10(64.0), n, dtype=xy.dtype, device=xy.device) * math.pi
    angles = xy.unsqueeze(-1) * freqs  # (..., 2, n)
    enc = torch.cat([angles.sin(), angles.cos()], dim=-1)  # (..., 2, 2n)
    return enc.flatten(-2)


def grid_centers(size: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Normalized centers of a size x size grid, row-major, shape (size*size, 2) as (x, y)."""
    c = (torch.arange(size, dtype=dtype, device=device) + 0.5) / size
    ys, xs = torch.meshgrid(c, c, indexing="ij")
    return torch.stack([xs.reshape(-1), ys.reshape(-1)], dim=-1)


def roi_bin_centers(boxes: torch.Tensor, size: int, image_size: int) -> torch.Tensor:
    """Normalized image positions of the ROI bins of (N, 4) boxes -> (N, size*size, 2)."""
    unit = grid_centers(size, boxes.dtype, boxes.device)  # (R*R, 2) in [0, 1]
    x1, y1, x2, y2 = boxes.unbind(-1)
    xs = x1.unsqueeze(1) + unit[:, 0] * (x2 - x1).unsqueeze(1)
    ys = y1.unsqueeze(1) + unit[:, 1] * (y2 - y1).unsqueeze(1)
    return torch.stack([xs, ys], dim=-1) / image_size
