"""Fixed-length clip windows cut from a scene."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..config import IMAGENET_MEAN, IMAGENET_STD
from .flow import compute_flow
from .lanes import LaneInput, encode_lanes, read_lane_file
from .records import DatasetFormatError, SceneRecord


@dataclass
class ClipSample:
    frames: np.ndarray        # (T, 3, S, S) float32, normalized RGB
    flow: np.ndarray          # (T, 3, S, S) float32, normalized flow rendering
    boxes: np.ndarray         # (N, T, 4) float32, resized pixel coords, zero where absent
    valid: np.ndarray         # (N, T) bool
    lanes: LaneInput
    seg_map: np.ndarray       # (3, S, S) float32 in [0, 1], final frame
    ego_velocity: float       # angular velocity at the first frame
    labels: np.ndarray        # (N,) int64
    track_ids: np.ndarray     # (N,) int64
    clip_id: str = ""
    t_end: int = 0

    @property
    def n_objects(self) -> int:
        return len(self.labels)

    @property
    def clip_len(self) -> int:
        return self.frames.shape[0]

    def check(self) -> None:
        t, c, h, w = self.frames.shape
        n = self.n_objects
        assert c == 3 and h == w, self.frames.shape
        assert self.flow.shape == self.frames.shape
        assert self.boxes.shape == (n, t, 4) and self.valid.shape == (n, t)
        assert self.seg_map.shape == (3, h, w)
        assert n >= 1 and self.track_ids.shape == (n,)
        assert self.valid[:, -1].all()
        assert not self.boxes[~self.valid].any()


def _read_rgb(path, size: int) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DatasetFormatError(f"cannot read image {path}")
    img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    native = img.shape[1], img.shape[0]
    if native != (size, size):
        img = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
    return img.transpose(2, 0, 1), native


def normalize(images: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """uint8 (..., 3, H, W) -> float32 normalized per channel."""
    x = images.astype(np.float32) / 255.0
    m = np.asarray(mean, np.float32).reshape(3, 1, 1)
    s = np.asarray(std, np.float32).reshape(3, 1, 1)
    return (x - m) / s


def sample_clip(scene: SceneRecord, t_end: int, T: int = 16, image_size: int = 320,
                mean=IMAGENET_MEAN, std=IMAGENET_STD, hflip: bool = False) -> ClipSample:
    """Clip of frames ``t_end-T+1 .. t_end``; objects are the tracks annotated at ``t_end``.

    ``hflip`` mirrors the clip left-right: images, boxes and lanes are
    reflected, the ego angular velocity changes sign, and flow is
    recomputed from the mirrored frames.
    """
    if t_end < T - 1:
        raise IndexError(f"t_end={t_end} leaves fewer than T={T} frames")
    if t_end >= scene.n_frames:
        raise IndexError(f"t_end={t_end} beyond the {scene.n_frames} frames of {scene.scene_id}")
    objects = scene.annotations.get(t_end, [])
    if not objects:
        raise DatasetFormatError(f"{scene.scene_id}: no annotated objects at frame {t_end}")
    t0 = t_end - T + 1
    raw, natives = [], []
    for f in range(t0, t_end + 1):
        img, native = _read_rgb(scene.frames[f], image_size)
        raw.append(img)
        natives.append(native)
    raw = np.stack(raw)
    if hflip:
        raw = np.ascontiguousarray(raw[..., ::-1])
    nw, nh = natives[-1]
    sx, sy = image_size / nw, image_size / nh
    scale = np.array([sx, sy, sx, sy], np.float32)

    flow_files = [scene.flow_path(f) for f in range(t0, t_end + 1)] if scene.root is not None else []
    if not hflip and flow_files and all(p.exists() for p in flow_files):
        flow = np.stack([_read_rgb(p, image_size)[0] for p in flow_files])
    else:
        flow = compute_flow(raw)

    seg, _ = _read_rgb(scene.seg_path(t_end), image_size)
    if hflip:
        seg = np.ascontiguousarray(seg[..., ::-1])

    track_ids = np.array([o.track_id for o in objects], dtype=np.int64)
    labels = np.array([o.importance for o in objects], dtype=np.int64)
    index = {tid: i for i, tid in enumerate(track_ids.tolist())}
    boxes = np.zeros((len(objects), T, 4), np.float32)
    valid = np.zeros((len(objects), T), bool)
    for k, f in enumerate(range(t0, t_end + 1)):
        for ann in scene.annotations.get(f, []):
            i = index.get(ann.track_id)
            if i is None:
                continue
            box = np.asarray(ann.box, np.float32) * scale
            box[[0, 2]] = np.clip(box[[0, 2]], 0, image_size)
            box[[1, 3]] = np.clip(box[[1, 3]], 0, image_size)
            if hflip:
                box[[0, 2]] = image_size - box[[2, 0]]
            boxes[i, k] = box
            valid[i, k] = True

    raw_lanes = read_lane_file(scene.lane_path(t_end)) if scene.root is not None else []
    mirror = (lambda x: image_size - x) if hflip else (lambda x: x)
    lanes = encode_lanes([[(mirror(x * sx), y * sy) for x, y in lane] for lane in raw_lanes])
    ego = float(scene.ego_angular_velocity[t0])

    return ClipSample(
        frames=normalize(raw, mean, std),
        flow=normalize(flow, mean, std),
        boxes=boxes,
        valid=valid,
        lanes=lanes,
        seg_map=seg.astype(np.float32) / 255.0,
        ego_velocity=-ego if hflip else ego,
        labels=labels,
        track_ids=track_ids,
        clip_id=f"{scene.scene_id}:{t_end:06d}" + (":flip" if hflip else ""),
        t_end=t_end,
    )


def clip_end_frames(scene: SceneRecord, T: int, stride: int = 10) -> list[int]:
    """Annotated final frames, thinned to ``stride`` spacing counting back from the latest."""
    ends: list[int] = []
    for t in sorted(scene.annotations, reverse=True):
        if t < T - 1 or not scene.annotations[t]:
            continue
        if not ends or ends[-1] - t >= stride:
            ends.append(t)
    return sorted(ends)
