"""Dense optical flow and its 3-channel color rendering."""
from __future__ import annotations

import cv2
import numpy as np

# flow magnitude (pixels) rendered at full brightness
FLOW_MAX_MAGNITUDE = 8.0

FARNEBACK_PARAMS = dict(pyr_scale=0.5, levels=3, winsize=15, iterations=3, poly_n=5, poly_sigma=1.2, flags=0)


def _to_gray(frame: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB, uint8 or float in [0, 1] -> (H, W) uint8."""
    img = np.asarray(frame)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return cv2.cvtColor(np.ascontiguousarray(img.transpose(1, 2, 0)), cv2.COLOR_RGB2GRAY)


def dense_flow(prev: np.ndarray, nxt: np.ndarray) -> np.ndarray:
    """Farneback flow from ``prev`` to ``nxt`` (grayscale uint8), shape (H, W, 2) as (dx, dy)."""
    return cv2.calcOpticalFlowFarneback(prev, nxt, None, **FARNEBACK_PARAMS)


def render_flow(field: np.ndarray, max_magnitude: float = FLOW_MAX_MAGNITUDE) -> np.ndarray:
    """HSV color coding: angle to hue, magnitude to value. Returns (3, H, W) uint8 RGB."""
    mag, ang = cv2.cartToPolar(field[..., 0].astype(np.float32), field[..., 1].astype(np.float32))
    hsv = np.zeros(field.shape[:2] + (3,), dtype=np.uint8)
    hsv[..., 0] = np.rint(ang * (90.0 / np.pi)).astype(np.int32) % 180
    hsv[..., 1] = 255
    hsv[..., 2] = np.clip(np.rint(mag / max_magnitude * 255.0), 0, 255).astype(np.uint8)
    # a zero field has undefined angle; keep the rendering constant
    hsv[..., 0][mag == 0] = 0
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    return rgb.transpose(2, 0, 1).copy()


def compute_flow(frames: np.ndarray, max_magnitude: float = FLOW_MAX_MAGNITUDE) -> np.ndarray:
    """Flow images for a (T, 3, H, W) clip; frame 0 gets the zero field."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1] != 3:
        raise ValueError(f"expected (T, 3, H, W) frames, got {frames.shape}")
    if frames.shape[0] < 2:
        raise ValueError("flow needs at least two frames")
    gray = [_to_gray(f) for f in frames]
    h, w = gray[0].shape
    out = np.empty((len(gray), 3, h, w), dtype=np.uint8)
    out[0] = render_flow(np.zeros((h, w, 2), np.float32), max_magnitude)
    zero = out[0]
    for t in range(1, len(gray)):
        # the polynomial solver leaves sub-pixel noise on identical frames
        if np.array_equal(gray[t - 1], gray[t]):
            out[t] = zero
        else:
            out[t] = render_flow(dense_flow(gray[t - 1], gray[t]), max_magnitude)
    return out
