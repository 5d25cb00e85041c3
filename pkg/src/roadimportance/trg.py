"""Traffic rule guidance: lane encoding, object-lane attention and the adaptive gate."""
from __future__ import annotations

import torch
from torch import nn

from .config import ConfigError, ModelConfig
from .layers import MultiHeadAttention, linear_ln_relu


def penalty_coefficient(p: torch.Tensor, alpha: float, mode: str = "hard", k: float = 50.0) -> torch.Tensor:
    """Gate coefficient per object.

    hard: 1 where p < 0.5, ``alpha`` elsewhere.
    soft: ``1 + (alpha - 1) * sigmoid(k * (p - 0.5))``, a differentiable stand-in for training.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if mode == "hard":
        return torch.where(p < 0.5, torch.ones_like(p), torch.full_like(p, alpha))
    if mode == "soft":
        return 1.0 + (alpha - 1.0) * torch.sigmoid(k * (p - 0.5))
    raise ValueError(f"unknown gate mode {mode!r}")


def apply_gate(f_ol_m: torch.Tensor, p_c: torch.Tensor) -> torch.Tensor:
    if f_ol_m.shape[0] != p_c.shape[0]:
        raise ValueError(f"{f_ol_m.shape[0]} features but {p_c.shape[0]} coefficients")
    return f_ol_m * p_c.unsqueeze(-1)


class TrafficRuleGuidance(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.lane_encoder = linear_ln_relu(cfg.lane_slots * 4, h)
        self.cross_attn = MultiHeadAttention(h, cfg.heads)
        self.gate_head = nn.Linear(h, 1)
        # start undecided (p = 0.5) so the soft gate passes gradient to every object
        nn.init.zeros_(self.gate_head.weight)
        nn.init.zeros_(self.gate_head.bias)

    def lane_feature(self, lanes: torch.Tensor) -> torch.Tensor:
        """(B, 20, 4) lane rows in pixels -> (B, C')."""
        return self.lane_encoder(lanes.flatten(1) * self.cfg.lane_scale)

    def object_lane_interaction(self, f_l: torch.Tensor, f_ot: torch.Tensor) -> torch.Tensor:
        """One query token (lane) and one key/value token (object) per object, plus residual."""
        if f_l.shape != f_ot.shape:
            raise ValueError(f"f_l {tuple(f_l.shape)} and f_ot {tuple(f_ot.shape)} disagree")
        return self.cross_attn(f_l.unsqueeze(1), f_ot.unsqueeze(1)).squeeze(1) + f_ot

    def gate_score(self, f_ol_m: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.gate_head(f_ol_m).squeeze(-1))

    def gate_mode(self) -> str:
        return self.cfg.trg.train_gate if self.training else "hard"

    def forward(self, lanes, f_ot, obj_clip):
        tc = self.cfg.trg
        f_l = self.lane_feature(lanes)[obj_clip]
        if tc.use_interaction:
            f_ol_m = self.object_lane_interaction(f_l, f_ot)
        else:
            f_ol_m = f_ot
        if tc.use_weighting:
            p = self.gate_score(f_ol_m)
            p_c = penalty_coefficient(p, tc.alpha, self.gate_mode(), tc.soft_k)
            f_ol = apply_gate(f_ol_m, p_c)
        else:
            p = p_c = None
            f_ol = f_ol_m
        return f_l, f_ol_m, p, p_c, f_ol
