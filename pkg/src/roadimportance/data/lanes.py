"""Fixed-size lane descriptors from detector polylines."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_LANES = 20


@dataclass
class LaneInput:
    points: np.ndarray  # (MAX_LANES, 4) float32, rows >= count are zero
    count: int

    def __post_init__(self):
        if self.points.shape != (MAX_LANES, 4):
            raise ValueError(f"lane array must be {MAX_LANES}x4, got {self.points.shape}")
        if not 0 <= self.count <= MAX_LANES:
            raise ValueError(f"lane count {self.count} outside [0, {MAX_LANES}]")


def polyline_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def fit_segment(points: np.ndarray) -> tuple[float, float, float, float]:
    """Total-least-squares line through ``points``, clipped to their extent.

    Returns ``(x_top, y_top, x_bottom, y_bottom)``: the endpoint with the
    smaller image y comes first.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 1:
        x, y = pts[0]
        return (x, y, x, y)
    centre = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centre, full_matrices=False)
    direction = vt[0]
    proj = (pts - centre) @ direction
    a = centre + proj.min() * direction
    b = centre + proj.max() * direction
    if (a[1], a[0]) > (b[1], b[0]):
        a, b = b, a
    return (float(a[0]), float(a[1]), float(b[0]), float(b[1]))


def encode_lanes(raw_lanes: Sequence[Sequence[Sequence[float]]], max_lanes: int = MAX_LANES) -> LaneInput:
    """Summarize each polyline as fitted-segment endpoints, keep the longest ``max_lanes``."""
    entries = []
    for lane in raw_lanes:
        pts = np.asarray(lane, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            continue
        entries.append((polyline_length(pts), fit_segment(pts)))
    # length first, then the row itself so equal-length lanes sort independent of input order
    entries.sort(key=lambda e: (-e[0], e[1]))
    out = np.zeros((MAX_LANES, 4), dtype=np.float32)
    kept = entries[:max_lanes]
    for i, (_, row) in enumerate(kept):
        out[i] = row
    return LaneInput(out, len(kept))


def read_lane_file(path: Path) -> list[list[list[float]]]:
    if not path.exists():
        return []
    return json.loads(path.read_text()).get("lanes", [])


def write_lane_file(path: Path, lanes: list[list[list[float]]]) -> None:
    path.write_text(json.dumps({"lanes": lanes}, separators=(",", ":")) + "\n")
