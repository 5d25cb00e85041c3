import json

import cv2
import numpy as np
import pytest

from roadimportance.data import (DatasetFormatError, ObjectAnnotation, SyntheticConfig, generate_synthetic,
                                 load_dataset, load_scene)
from roadimportance.data.records import write_manifest, write_scene


def _blank_scene(root, scene_id, n_frames, annotations=None):
    sdir = root / scene_id
    (sdir / "frames").mkdir(parents=True)
    img = np.zeros((4, 4, 3), np.uint8)
    for f in range(n_frames):
        cv2.imwrite(str(sdir / "frames" / f"{f:06d}.png"), img)
    write_scene(sdir, annotations or {}, np.zeros(n_frames))
    return sdir


def test_synthetic_round_trip_annotations(tmp_path):
    root = generate_synthetic(SyntheticConfig(n_clips=3, n_frames=3, image_size=32, seed=1), tmp_path / "d")
    original = {p.parent.name: p.read_bytes() for p in root.glob("*/annotations.jsonl")}
    for split in ("train", "test"):
        for scene in load_dataset(root, split):
            out = tmp_path / "copy" / scene.scene_id
            write_scene(out, scene.annotations, scene.ego_angular_velocity)
            assert (out / "annotations.jsonl").read_bytes() == original[scene.scene_id]
            again = load_scene(root / scene.scene_id)
            assert again.annotations == scene.annotations
            np.testing.assert_array_equal(again.ego_angular_velocity, scene.ego_angular_velocity)


def test_toi_shaped_manifest_loads_all_scenes(tmp_path):
    # 28 scenes, 9,858 frames, split 8,121 : 1,737 by frames
    train_counts = [353] * 22 + [355]
    test_counts = [347] * 4 + [349]
    assert sum(train_counts) == 8121 and sum(test_counts) == 1737
    scenes, splits = [], {"train": [], "test": []}
    for split, counts in (("train", train_counts), ("test", test_counts)):
        for n in counts:
            sid = f"scene_{len(scenes):02d}"
            _blank_scene(tmp_path, sid, n)
            scenes.append({"id": sid, "n_frames": n, "image_size": [4, 4]})
            splits[split].append(sid)
    write_manifest(tmp_path, scenes, splits, {"frames": 9858, "scenes": 28})
    train = load_dataset(tmp_path, "train")
    test = load_dataset(tmp_path, "test")
    assert len(train) + len(test) == 28
    assert sum(s.n_frames for s in train) == 8121
    assert sum(s.n_frames for s in test) == 1737
    assert sum(s.n_frames for s in train + test) == 9858


def test_load_dataset_scene_and_frame_totals(tmp_path):
    for sid, n in (("a", 3), ("b", 2), ("c", 4)):
        _blank_scene(tmp_path, sid, n)
    scenes = [{"id": s, "n_frames": n} for s, n in (("a", 3), ("b", 2), ("c", 4))]
    write_manifest(tmp_path, scenes, {"train": ["a", "c"], "test": ["b"]}, {"frames": 9})
    train = load_dataset(tmp_path, "train")
    test = load_dataset(tmp_path, "test")
    assert [s.scene_id for s in train] == ["a", "c"]
    assert sum(s.n_frames for s in train + test) == 9


def test_frame_total_mismatch_is_fatal(tmp_path):
    _blank_scene(tmp_path, "a", 3)
    write_manifest(tmp_path, [{"id": "a", "n_frames": 3}], {"train": ["a"], "test": []}, {"frames": 5})
    with pytest.raises(DatasetFormatError, match="total"):
        load_dataset(tmp_path, "train")


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetFormatError, match="manifest"):
        load_dataset(tmp_path, "train")


def test_malformed_annotation_names_scene_and_frame(tmp_path):
    sdir = _blank_scene(tmp_path, "scene_x", 3)
    (sdir / "annotations.jsonl").write_text(
        json.dumps({"frame": 0, "track_id": 1, "box": [0, 0, 2, 2], "importance": 1}) + "\n"
        + json.dumps({"frame": 2, "track_id": 1, "box": [0, 0, 2], "importance": 1}) + "\n")
    with pytest.raises(DatasetFormatError, match=r"scene_x, frame 2"):
        load_scene(sdir)


def test_unparseable_annotation_line_names_line(tmp_path):
    sdir = _blank_scene(tmp_path, "scene_y", 2)
    (sdir / "annotations.jsonl").write_text("{not json\n")
    with pytest.raises(DatasetFormatError, match=r"scene_y, line 1"):
        load_scene(sdir)


@pytest.mark.parametrize("box,importance", [((0, 0, 0, 1), 1), ((0, 0, 1, 1), 2)])
def test_object_annotation_validation(box, importance):
    with pytest.raises(ValueError):
        ObjectAnnotation(0, box, importance)
