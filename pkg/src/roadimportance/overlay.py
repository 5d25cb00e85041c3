"""Qualitative overlays: importance boxes and lane-gate tints drawn on a frame."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

# RGB
IMPORTANT = (255, 0, 0)
UNIMPORTANT = (0, 200, 0)
PENALIZED = (0, 90, 255)
ENABLED = (220, 170, 0)
TINT_OPACITY = 0.35


def gate_color(p_c: float | None, alpha: float) -> tuple[int, int, int] | None:
    """Blue for objects whose lane interaction was suppressed, yellow where it was kept."""
    if p_c is None:
        return None
    if np.isclose(p_c, alpha, rtol=0, atol=1e-12):
        return PENALIZED
    if np.isclose(p_c, 1.0, rtol=0, atol=1e-12):
        return ENABLED
    return None


def draw_overlay(frame: np.ndarray, boxes: np.ndarray, scores: Sequence[float], threshold: float = 0.5,
                 p_c: Sequence[float] | None = None, alpha: float | None = None,
                 thickness: int = 2) -> np.ndarray:
    """Return an (H, W, 3) uint8 RGB copy of ``frame`` with one box per object.

    Boxes are red where the score reaches ``threshold`` and green otherwise.
    When gate coefficients are given, the box interior is tinted blue
    (``p_c == alpha``) or yellow (``p_c == 1``).
    """
    img = np.ascontiguousarray(frame, dtype=np.uint8).copy()
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"frame must be (H, W, 3), got {img.shape}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(scores) != len(boxes):
        raise ValueError(f"{len(boxes)} boxes but {len(scores)} scores")
    h, w = img.shape[:2]
    for i, (box, score) in enumerate(zip(boxes, scores)):
        x1, y1, x2, y2 = (int(round(v)) for v in box)
        x1, x2 = max(0, min(x1, w - 1)), max(0, min(x2, w - 1))
        y1, y2 = max(0, min(y1, h - 1)), max(0, min(y2, h - 1))
        tint = None if p_c is None or alpha is None else gate_color(p_c[i], alpha)
        if tint is not None and x2 > x1 and y2 > y1:
            region = img[y1:y2 + 1, x1:x2 + 1].astype(np.float64)
            blended = (1 - TINT_OPACITY) * region + TINT_OPACITY * np.array(tint, np.float64)
            img[y1:y2 + 1, x1:x2 + 1] = np.round(blended).astype(np.uint8)
        color = IMPORTANT if score >= threshold else UNIMPORTANT
        cv2.rectangle(img, (x1, y1), (x2, y2), color, thickness)
    return img


def render_overlay(frame: np.ndarray, boxes: np.ndarray, scores: Sequence[float], path: str | Path,
                   threshold: float = 0.5, p_c: Sequence[float] | None = None,
                   alpha: float | None = None) -> Path:
    """Draw the overlay and write it as a PNG."""
    img = draw_overlay(frame, boxes, scores, threshold, p_c, alpha)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(img, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")
    return path
