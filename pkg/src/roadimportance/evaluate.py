"""Scoring a checkpoint over a dataset split and the report it produces."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .data.clips import ClipSample, clip_end_frames, sample_clip
from .data.records import SceneRecord
from .metrics import accuracy, average_precision, f1_score, precision_recall_curve


@dataclass
class ObjectScore:
    clip_id: str
    track_id: int
    score: float
    label: int
    p: float | None = None
    p_c: float | None = None


@dataclass
class EvalReport:
    ap: float
    f1: float
    acc: float
    pr_curve: list[tuple[float, float]]
    per_object: list[ObjectScore] = field(default_factory=list)
    threshold: float = 0.5

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pr_curve"] = [list(pt) for pt in self.pr_curve]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            ap=data["ap"],
            f1=data["f1"],
            acc=data["acc"],
            pr_curve=[(float(r), float(p)) for r, p in data["pr_curve"]],
            per_object=[ObjectScore(**o) for o in data["per_object"]],
            threshold=data.get("threshold", 0.5),
        )

    def save(self, path: str | Path) -> Path:
        # repr-exact floats, so a reload compares equal
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_pr_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["recall", "precision"])
            w.writerows(self.pr_curve)
        return path

    def summary(self) -> str:
        return f"AP {self.ap:.4f}  F1 {self.f1:.4f}  Acc {self.acc:.4f}  ({len(self.per_object)} objects)"


def report_from_scores(objects: Sequence[ObjectScore], threshold: float = 0.5) -> EvalReport:
    """Pool object scores from every clip into one ranking."""
    if not objects:
        raise ValueError("no objects to evaluate")
    objects = sorted(objects, key=lambda o: (o.clip_id, o.track_id))
    scores = np.array([o.score for o in objects])
    labels = np.array([o.label for o in objects])
    if labels.any():
        ap = average_precision(scores, labels)
        curve = precision_recall_curve(scores, labels)
    else:
        ap, curve = math.nan, []
    return EvalReport(ap, f1_score(scores, labels, threshold), accuracy(scores, labels, threshold), curve,
                      list(objects), threshold)


def score_objects(model, clips: Sequence[ClipSample], batch_size: int = 8) -> list[ObjectScore]:
    out: list[ObjectScore] = []
    for i in range(0, len(clips), batch_size):
        chunk = clips[i:i + batch_size]
        res = model.predict(chunk)
        A = res.A.double().numpy()
        p = None if res.p is None else res.p.double().numpy()
        p_c = None if res.p_c is None else res.p_c.double().numpy()
        k = 0
        for clip in chunk:
            for tid, label in zip(clip.track_ids.tolist(), clip.labels.tolist()):
                out.append(ObjectScore(clip.clip_id, int(tid), float(A[k]), int(label),
                                       None if p is None else float(p[k]),
                                       None if p_c is None else float(p_c[k])))
                k += 1
    return out


def evaluation_clips(scenes: Iterable[SceneRecord], T: int, image_size: int, stride: int = 10,
                     mean=None, std=None) -> list[ClipSample]:
    """One clip per annotated end frame at the evaluation cadence, in a canonical order."""
    kw = {} if mean is None else {"mean": mean, "std": std}
    clips = []
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        for t in clip_end_frames(scene, T, stride):
            clips.append(sample_clip(scene, t, T, image_size, **kw))
    return clips


def evaluate(checkpoint: Checkpoint | str | Path, scenes: Sequence[SceneRecord], stride: int = 10,
             threshold: float = 0.5, batch_size: int = 8) -> EvalReport:
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    if not scenes:
        raise ValueError("evaluation split is empty")
    model = checkpoint.build_model().eval()
    cfg = checkpoint.model_config
    clips = evaluation_clips(scenes, cfg.clip_len, cfg.image_size, stride, cfg.mean, cfg.std)
    if not clips:
        raise ValueError(f"no clip of length {cfg.clip_len} fits in the given scenes")
    return report_from_scores(score_objects(model, clips, batch_size), threshold)
