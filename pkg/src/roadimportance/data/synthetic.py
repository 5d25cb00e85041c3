"""Desk-scale synthetic scenes with rule-derived importance labels.

Each scene is a static road template (sky, verge, road, four lane lines)
with colored rectangles moving linearly over it. Labels come from one of
three rules evaluated on the object's box center:

``intention_path_collision``
    the center lies in the region the driver attends to for the ego
    intention: right half when turning left (E > beta), left half when
    turning right (E < -beta), the central band otherwise.
``drivable_area``
    the center is on the road surface and in the near field.
``lane_barrier``
    the center lies inside the ego lane.

Objects are re-drawn until their center is at least ``margin`` (fraction
of the image) away from the rule's decision boundary in every frame they
appear in, so labels are unambiguous wherever a clip ends.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import cv2
import numpy as np

from .lanes import write_lane_file
from .records import TOI_FPS, ObjectAnnotation, write_manifest, write_scene


class ImportanceRule(str, Enum):
    INTENTION_PATH_COLLISION = "intention_path_collision"
    DRIVABLE_AREA = "drivable_area"
    LANE_BARRIER = "lane_barrier"


HORIZON = 0.35
NEAR_FIELD = 0.6
STRAIGHT_BAND = (0.3, 0.7)
LANE_BOTTOMS = (0.18, 0.38, 0.62, 0.82)

SKY = (135, 206, 235)
VERGE = (70, 130, 60)
ROAD = (95, 95, 95)
LANE = (245, 245, 245)
OBJECT_COLORS = [(220, 40, 40), (40, 60, 220), (240, 200, 30), (230, 120, 20),
                 (150, 40, 170), (20, 170, 170), (250, 250, 250), (30, 30, 30)]

SEG_SKY = (70, 130, 180)
SEG_VEGETATION = (107, 142, 35)
SEG_ROAD = (128, 64, 128)
SEG_LANE = (157, 234, 50)
SEG_VEHICLE = (0, 0, 142)


@dataclass
class SyntheticConfig:
    n_clips: int = 32
    n_objects_range: tuple[int, int] = (4, 8)
    importance_rule: ImportanceRule = ImportanceRule.INTENTION_PATH_COLLISION
    seed: int = 0
    n_frames: int = 16
    image_size: int = 320
    test_fraction: float = 0.25
    beta: float = 2.2
    margin: float = 0.04

    def __post_init__(self):
        self.importance_rule = ImportanceRule(self.importance_rule)
        lo, hi = self.n_objects_range
        self.n_objects_range = (int(lo), int(hi))
        if not 1 <= lo <= hi:
            raise ValueError(f"bad n_objects_range {self.n_objects_range}")
        if self.n_clips < 1 or self.n_frames < 1 or self.image_size < 16:
            raise ValueError("n_clips, n_frames must be positive and image_size >= 16")


@dataclass
class RoadGeometry:
    size: int
    vanish_x: float
    lane_bottoms: tuple[float, ...]

    @property
    def horizon_y(self) -> float:
        return HORIZON * self.size

    def line_x(self, bottom_x: float, y: float) -> float:
        """x of the straight line from (bottom_x, size) to the vanishing point at height y."""
        t = (self.size - y) / (self.size - self.horizon_y)
        return bottom_x + t * (self.vanish_x - bottom_x)

    def road_edges(self, y: float) -> tuple[float, float]:
        return self.line_x(0.02 * self.size, y), self.line_x(0.98 * self.size, y)

    def ego_lane(self, y: float) -> tuple[float, float]:
        return self.line_x(self.lane_bottoms[1], y), self.line_x(self.lane_bottoms[2], y)

    def lane_polylines(self, n_points: int = 8) -> list[list[list[float]]]:
        ys = np.linspace(self.horizon_y + 0.05 * self.size, self.size - 1, n_points)
        return [[[round(self.line_x(b, y), 3), round(float(y), 3)] for y in ys] for b in self.lane_bottoms]


def intention_region(ego_velocity: float, beta: float, size: float) -> tuple[float, float]:
    if ego_velocity > beta:
        return 0.5 * size, float(size)
    if ego_velocity < -beta:
        return 0.0, 0.5 * size
    return STRAIGHT_BAND[0] * size, STRAIGHT_BAND[1] * size


def rule_decision(rule: ImportanceRule | str, box, ego_velocity: float, beta: float,
                  geometry: RoadGeometry) -> tuple[int, float]:
    """(label, distance in pixels from the center to the rule's decision boundary)."""
    rule = ImportanceRule(rule)
    cx, cy = (box[0] + box[2]) / 2, (box[1] + box[3]) / 2
    if rule is ImportanceRule.INTENTION_PATH_COLLISION:
        lo, hi = intention_region(ego_velocity, beta, geometry.size)
        inside = lo <= cx < hi
        edges = [e for e in (lo, hi) if 0 < e < geometry.size]
        return int(inside), min(abs(cx - e) for e in edges)
    if rule is ImportanceRule.DRIVABLE_AREA:
        left, right = geometry.road_edges(cy)
        near = NEAR_FIELD * geometry.size
        inside = left <= cx <= right and cy >= near
        return int(inside), min(abs(cx - left), abs(cx - right), abs(cy - near))
    left, right = geometry.ego_lane(cy)
    return int(left <= cx <= right), min(abs(cx - left), abs(cx - right))


def importance_label(rule, box, ego_velocity, beta, geometry) -> int:
    return rule_decision(rule, box, ego_velocity, beta, geometry)[0]


def _sample_ego(rng: np.random.Generator, beta: float) -> float:
    kind = rng.integers(3)
    if kind == 0:
        return float(rng.uniform(beta + 0.4, beta + 2.0))
    if kind == 1:
        return float(rng.uniform(-beta + 0.4, beta - 0.4))
    return float(-rng.uniform(beta + 0.4, beta + 2.0))


def _render_background(geom: RoadGeometry, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    s = geom.size
    img = np.empty((s, s, 3), np.uint8)
    seg = np.empty((s, s, 3), np.uint8)
    hy = int(round(geom.horizon_y))
    img[:hy] = SKY
    img[hy:] = VERGE
    seg[:hy] = SEG_SKY
    seg[hy:] = SEG_VEGETATION
    left_top, right_top = geom.road_edges(geom.horizon_y)
    road = np.array([[left_top, hy], [right_top, hy], [0.98 * s, s], [0.02 * s, s]], np.int32)
    cv2.fillPoly(img, [road], ROAD)
    cv2.fillPoly(seg, [road], SEG_ROAD)
    thickness = max(1, s // 160)
    for lane in geom.lane_polylines():
        pts = np.array(lane, np.int32)
        cv2.polylines(img, [pts], False, LANE, thickness)
        cv2.polylines(seg, [pts], False, SEG_LANE, thickness)
    # static texture so dense flow has something to lock onto
    noise = rng.integers(-12, 13, size=(s, s, 1))
    img = np.clip(img.astype(np.int32) + noise, 0, 255).astype(np.uint8)
    return img, seg


def _sample_object(rng, cfg: SyntheticConfig, geom: RoadGeometry, ego: float):
    s = cfg.image_size
    last = cfg.n_frames - 1
    for _ in range(1000):
        w = rng.uniform(0.08, 0.16) * s
        h = rng.uniform(0.07, 0.13) * s
        cx = rng.uniform(0.08, 0.92) * s
        cy = rng.uniform(0.45, 0.9) * s
        vx, vy = rng.uniform(-0.015, 0.015, size=2) * s
        appear = int(rng.integers(1, cfg.n_frames)) if cfg.n_frames > 1 and rng.random() < 0.25 else 0
        color = OBJECT_COLORS[int(rng.integers(len(OBJECT_COLORS)))]
        boxes = {}
        for f in range(appear, cfg.n_frames):
            dx, dy = (f - last) * vx, (f - last) * vy
            x1 = min(max(cx - w / 2 + dx, 0.0), s - 2.0)
            y1 = min(max(cy - h / 2 + dy, 0.0), s - 2.0)
            x2 = max(min(cx + w / 2 + dx, float(s)), x1 + 1.0)
            y2 = max(min(cy + h / 2 + dy, float(s)), y1 + 1.0)
            boxes[f] = tuple(round(v, 2) for v in (x1, y1, x2, y2))
        if min(rule_decision(cfg.importance_rule, b, ego, cfg.beta, geom)[1] for b in boxes.values()) < cfg.margin * s:
            continue
        return boxes, color
    raise RuntimeError("could not place an object away from the rule boundary")


def generate_synthetic(config: SyntheticConfig, out: str | Path) -> Path:
    """Write a complete dataset root under ``out`` and return it."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    cfg = config
    s = cfg.image_size
    scenes, n_objects, n_important = [], 0, 0
    for index in range(cfg.n_clips):
        rng = np.random.default_rng([cfg.seed, index])
        scene_id = f"scene_{index:04d}"
        sdir = root / scene_id
        for sub in ("frames", "seg", "lanes"):
            (sdir / sub).mkdir(parents=True, exist_ok=True)
        geom = RoadGeometry(
            s, float(s * (0.5 + rng.uniform(-0.05, 0.05))),
            tuple(float(s * (b + rng.uniform(-0.02, 0.02))) for b in LANE_BOTTOMS),
        )
        ego_base = _sample_ego(rng, cfg.beta)
        ego = ego_base + rng.uniform(-0.1, 0.1, size=cfg.n_frames)
        ego[0] = ego_base
        background, seg_background = _render_background(geom, rng)
        lo, hi = cfg.n_objects_range
        objects = [_sample_object(rng, cfg, geom, ego_base) for _ in range(int(rng.integers(lo, hi + 1)))]

        annotations: dict[int, list[ObjectAnnotation]] = {}
        lanes = geom.lane_polylines()
        for f in range(cfg.n_frames):
            img, seg = background.copy(), seg_background.copy()
            present = [(tid, boxes[f], color) for tid, (boxes, color) in enumerate(objects) if f in boxes]
            # far objects first so near ones occlude them
            for tid, box, color in sorted(present, key=lambda o: o[1][3]):
                p1 = (int(round(box[0])), int(round(box[1])))
                p2 = (int(round(box[2])) - 1, int(round(box[3])) - 1)
                cv2.rectangle(img, p1, p2, color, -1)
                cv2.rectangle(seg, p1, p2, SEG_VEHICLE, -1)
            annotations[f] = [
                ObjectAnnotation(tid, box, importance_label(cfg.importance_rule, box, ego_base, cfg.beta, geom))
                for tid, box, _ in present
            ]
            cv2.imwrite(str(sdir / "frames" / f"{f:06d}.png"), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
            cv2.imwrite(str(sdir / "seg" / f"{f:06d}.png"), cv2.cvtColor(seg, cv2.COLOR_RGB2BGR))
            write_lane_file(sdir / "lanes" / f"{f:06d}.json", lanes)
        annotations = {f: a for f, a in annotations.items() if a}
        write_scene(sdir, annotations, ego)
        n_objects += sum(len(a) for a in annotations.values())
        n_important += sum(o.importance for a in annotations.values() for o in a)
        scenes.append({"id": scene_id, "n_frames": cfg.n_frames, "image_size": [s, s]})

    order = np.random.default_rng([cfg.seed, 10**6]).permutation(cfg.n_clips)
    n_test = max(1, int(round(cfg.n_clips * cfg.test_fraction))) if cfg.n_clips > 1 else 0
    test = sorted(scenes[i]["id"] for i in order[:n_test])
    train = sorted(scenes[i]["id"] for i in order[n_test:])
    totals = {"frames": cfg.n_frames * cfg.n_clips, "objects": n_objects, "important": n_important,
              "scenes": cfg.n_clips}
    meta = asdict(cfg)
    meta["importance_rule"] = cfg.importance_rule.value
    meta["n_objects_range"] = list(cfg.n_objects_range)
    write_manifest(root, scenes, {"train": train, "test": test}, totals, TOI_FPS,
                   {"synthetic": json.loads(json.dumps(meta))})
    return root
