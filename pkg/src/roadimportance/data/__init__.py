from .clips import ClipSample, clip_end_frames, normalize, sample_clip
from .flow import compute_flow, dense_flow, render_flow
from .lanes import MAX_LANES, LaneInput, encode_lanes
from .records import DatasetFormatError, ObjectAnnotation, SceneRecord, load_dataset, load_scene
from .synthetic import ImportanceRule, SyntheticConfig, generate_synthetic

__all__ = [
    "ClipSample", "DatasetFormatError", "ImportanceRule", "LaneInput", "MAX_LANES", "ObjectAnnotation",
    "SceneRecord", "SyntheticConfig", "clip_end_frames", "compute_flow", "dense_flow", "encode_lanes",
    "generate_synthetic", "load_dataset", "load_scene", "normalize", "render_flow", "sample_clip",
]
