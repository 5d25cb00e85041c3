"""On-disk scene format.

Layout of a dataset root::

    root/manifest.json
    root/<scene>/frames/%06d.png
    root/<scene>/annotations.jsonl     one object-frame per line
    root/<scene>/ego.csv               frame,angular_velocity
    root/<scene>/lanes/%06d.json       {"lanes": [[[x, y], ...], ...]}
    root/<scene>/seg/%06d.png
    root/<scene>/flow/%06d.png         optional, computed when missing
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
TOI_FPS = 10


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectAnnotation:
    track_id: int
    box: tuple[float, float, float, float]
    importance: int

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {self.box} for track {self.track_id}")
        if self.importance not in (0, 1):
            raise ValueError(f"importance must be 0 or 1, got {self.importance}")


@dataclass
class SceneRecord:
    scene_id: str
    frames: list[Path]
    annotations: dict[int, list[ObjectAnnotation]]
    ego_angular_velocity: np.ndarray
    fps: float = TOI_FPS
    image_size: tuple[int, int] = (0, 0)  # (width, height) at native resolution
    root: Path | None = None
    frame_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.frame_ids:
            self.frame_ids = list(range(len(self.frames)))
        if any(b <= a for a, b in zip(self.frame_ids, self.frame_ids[1:])):
            raise DatasetFormatError(f"{self.scene_id}: frame indices must be strictly increasing")
        known = set(self.frame_ids)
        for frame in self.annotations:
            if frame not in known:
                raise DatasetFormatError(f"{self.scene_id}: annotation for missing frame {frame}")
        for frame, objs in self.annotations.items():
            ids = [o.track_id for o in objs]
            if len(ids) != len(set(ids)):
                raise DatasetFormatError(f"{self.scene_id}: duplicate track id in frame {frame}")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def lane_path(self, frame: int) -> Path:
        return self.root / "lanes" / f"{frame:06d}.json"

    def seg_path(self, frame: int) -> Path:
        return self.root / "seg" / f"{frame:06d}.png"

    def flow_path(self, frame: int) -> Path:
        return self.root / "flow" / f"{frame:06d}.png"


def annotation_line(frame: int, ann: ObjectAnnotation) -> str:
    return json.dumps(
        {"frame": frame, "track_id": ann.track_id, "box": list(ann.box), "importance": ann.importance},
        separators=(",", ":"),
    )


def _parse_annotations(path: Path, scene_id: str) -> dict[int, list[ObjectAnnotation]]:
    out: dict[int, list[ObjectAnnotation]] = {}
    if not path.exists():
        raise DatasetFormatError(f"{scene_id}: missing annotations.jsonl")
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        row = None
        try:
            row = json.loads(line)
            frame = int(row["frame"])
            box = tuple(float(v) for v in row["box"])
            if len(box) != 4 or not all(math.isfinite(v) for v in box):
                raise ValueError("box must have 4 finite numbers")
            ann = ObjectAnnotation(int(row["track_id"]), box, int(row["importance"]))
        except (ValueError, KeyError, TypeError) as exc:
            where = f"frame {row.get('frame')}" if isinstance(row, dict) and "frame" in row else f"line {lineno}"
            raise DatasetFormatError(f"{scene_id}, {where}: malformed annotation ({exc})") from exc
        out.setdefault(frame, []).append(ann)
    return out


def _parse_ego(path: Path, scene_id: str, n_frames: int) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"{scene_id}: missing ego.csv")
    ego = np.zeros(n_frames, dtype=np.float64)
    seen = np.zeros(n_frames, dtype=bool)
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                frame = int(row["frame"])
                ego[frame] = float(row["angular_velocity"])
                seen[frame] = True
            except (ValueError, KeyError, IndexError) as exc:
                raise DatasetFormatError(f"{scene_id}: malformed ego.csv row {row}") from exc
    if n_frames and not seen.all():
        missing = np.flatnonzero(~seen)[:5].tolist()
        raise DatasetFormatError(f"{scene_id}: ego.csv lacks frames {missing}")
    return ego


def load_scene(scene_dir: str | Path, fps: float = TOI_FPS, n_frames: int | None = None,
               image_size: tuple[int, int] = (0, 0)) -> SceneRecord:
    scene_dir = Path(scene_dir)
    scene_id = scene_dir.name
    frames_dir = scene_dir / "frames"
    if not frames_dir.is_dir():
        raise DatasetFormatError(f"{scene_id}: missing frames/ directory")
    frames = sorted(frames_dir.glob("*.png"))
    if n_frames is not None and len(frames) != n_frames:
        raise DatasetFormatError(f"{scene_id}: manifest lists {n_frames} frames, found {len(frames)}")
    try:
        frame_ids = [int(p.stem) for p in frames]
    except ValueError as exc:
        raise DatasetFormatError(f"{scene_id}: frame files must be named %06d.png") from exc
    if frame_ids != list(range(len(frames))):
        raise DatasetFormatError(f"{scene_id}: frame files must be numbered 0..{len(frames) - 1}")
    annotations = _parse_annotations(scene_dir / "annotations.jsonl", scene_id)
    ego = _parse_ego(scene_dir / "ego.csv", scene_id, len(frames))
    return SceneRecord(scene_id, frames, annotations, ego, fps, tuple(image_size), scene_dir, frame_ids)


def read_manifest(root: str | Path) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise DatasetFormatError(f"no {MANIFEST} in {root}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable {MANIFEST}: {exc}") from exc
    for key in ("scenes", "splits", "totals"):
        if key not in manifest:
            raise DatasetFormatError(f"{MANIFEST} lacks {key!r}")
    return manifest


def load_dataset(root: str | Path, split: str) -> list[SceneRecord]:
    """Load every scene of ``split`` ("train" or "test") listed in the manifest."""
    root = Path(root)
    manifest = read_manifest(root)
    if split not in manifest["splits"]:
        raise DatasetFormatError(f"split {split!r} not in manifest (have {sorted(manifest['splits'])})")
    info = {s["id"]: s for s in manifest["scenes"]}
    split_frames = 0
    for name, ids in manifest["splits"].items():
        for sid in ids:
            if sid not in info:
                raise DatasetFormatError(f"split {name!r} names unknown scene {sid!r}")
            split_frames += int(info[sid]["n_frames"])
    if split_frames != int(manifest["totals"]["frames"]):
        raise DatasetFormatError(
            f"split frame counts sum to {split_frames}, manifest total is {manifest['totals']['frames']}")
    fps = float(manifest.get("fps", TOI_FPS))
    scenes = []
    for sid in manifest["splits"][split]:
        s = info[sid]
        scenes.append(load_scene(root / sid, fps, int(s["n_frames"]), tuple(s.get("image_size", (0, 0)))))
    return scenes


def write_scene(scene_dir: Path, annotations: dict[int, list[ObjectAnnotation]], ego: np.ndarray) -> None:
    """Write annotations.jsonl and ego.csv; image planes are written by the caller."""
    scene_dir.mkdir(parents=True, exist_ok=True)
    lines = [annotation_line(f, a) for f in sorted(annotations) for a in annotations[f]]
    (scene_dir / "annotations.jsonl").write_text("".join(line + "\n" for line in lines))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "angular_velocity"])
    for i, v in enumerate(ego):
        writer.writerow([i, repr(float(v))])
    (scene_dir / "ego.csv").write_text(buf.getvalue())


def write_manifest(root: Path, scenes: list[dict], splits: dict[str, list[str]], totals: dict,
                   fps: float = TOI_FPS, extra: dict | None = None) -> None:
    manifest = {"version": FORMAT_VERSION, "fps": fps, "scenes": scenes, "splits": splits, "totals": totals}
    if extra:
        manifest.update(extra)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
