import numpy as np
import pytest
import torch
import torch.nn.functional as F

from roadimportance.config import model_config
from roadimportance.model import collate
from roadimportance.ofe import ObjectFeatureExtractor, StreamFeatures, roi_pool, sanitize_boxes, valid_time_average

from conftest import random_clip


@pytest.fixture
def ofe(micro_cfg):
    return ObjectFeatureExtractor(micro_cfg).eval()


def _batch(rng, n=(3, 2), T=4):
    return collate([random_clip(rng, k, T=T, clip_id=str(i)) for i, k in enumerate(n)])


def test_output_shapes(ofe, micro_cfg, rng):
    b = _batch(rng)
    with torch.no_grad():
        sf, f_os, f_ot = ofe(b.frames, b.flow, b.boxes, b.valid, b.obj_clip)
    c, r, h = micro_cfg.channels, micro_cfg.roi_size, micro_cfg.hidden
    assert sf.f_v.shape == sf.f_m.shape == (5, 4, c, r, r)
    assert f_os.shape == (5, 2 * c, r, r)
    assert f_ot.shape == (5, h)
    assert torch.isfinite(f_os).all() and torch.isfinite(f_ot).all()


def test_object_order_equivariance(ofe, rng):
    b = _batch(rng, n=(4,))
    perm = torch.tensor([2, 0, 3, 1])
    with torch.no_grad():
        sf, f_os, f_ot = ofe(b.frames, b.flow, b.boxes, b.valid, b.obj_clip)
        sf_p, f_os_p, f_ot_p = ofe(b.frames, b.flow, b.boxes[perm], b.valid[perm], b.obj_clip[perm])
    torch.testing.assert_close(f_os_p, f_os[perm], rtol=0, atol=1e-6)
    torch.testing.assert_close(f_ot_p, f_ot[perm], rtol=0, atol=1e-6)
    torch.testing.assert_close(sf_p.f_v, sf.f_v[perm], rtol=0, atol=0)


def test_full_frame_roi_equals_pooled_map():
    maps = torch.randn(2, 5, 8, 8, dtype=torch.float64)
    boxes = torch.tensor([[[0.0, 0.0, 64.0, 64.0]] * 2], dtype=torch.float64)
    valid = torch.ones(1, 2, dtype=torch.bool)
    out = roi_pool(maps, boxes, valid, torch.tensor([0]), 4, 8)
    torch.testing.assert_close(out[0], F.adaptive_avg_pool2d(maps, 4), rtol=0, atol=1e-12)


def test_invalid_frames_pool_to_zero():
    maps = torch.randn(3, 2, 8, 8)
    boxes = torch.tensor([[[4.0, 4.0, 40.0, 40.0]] * 3])
    valid = torch.tensor([[False, True, True]])
    out = roi_pool(maps, boxes, valid, torch.tensor([0]), 2, 8)
    assert not out[0, 0].any() and out[0, 1].abs().sum() > 0


def test_degenerate_box_is_clamped_with_warning(caplog):
    boxes = torch.tensor([[[5.0, 5.0, 5.0, 9.0]]])
    with caplog.at_level("WARNING"):
        out = sanitize_boxes(boxes, torch.ones(1, 1, dtype=torch.bool))
    assert out[0, 0, 2] - out[0, 0, 0] == 1.0
    assert "degenerate" in caplog.text


def test_zero_image_bias_free_backbone_gives_zero_features(rng):
    cfg = model_config("micro", **{"ofe.bias": False, "ofe.coord_channels": False})
    ofe = ObjectFeatureExtractor(cfg).eval()
    b = _batch(rng, n=(2,))
    with torch.no_grad():
        sf = ofe.extract_stream_features(torch.zeros_like(b.frames), torch.zeros_like(b.flow), b.boxes, b.valid,
                                         b.obj_clip)
    assert not sf.f_v.any() and not sf.f_m.any()


def test_time_average_counts_only_valid_frames():
    f = torch.randn(2, 4, 3, 2, 2, dtype=torch.float64)
    valid = torch.tensor([[True, False, True, True], [False, False, False, True]])
    f = f * valid.view(2, 4, 1, 1, 1)
    out = valid_time_average(f, valid)
    torch.testing.assert_close(out[0], (f[0, 0] + f[0, 2] + f[0, 3]) / 3, rtol=0, atol=1e-12)
    torch.testing.assert_close(out[1], f[1, 3], rtol=0, atol=0)


def test_constant_streams_average_to_any_frame():
    frame = torch.randn(1, 1, 3, 2, 2)
    f = frame.expand(1, 5, 3, 2, 2)
    torch.testing.assert_close(valid_time_average(f, torch.ones(1, 5, dtype=torch.bool))[0], frame[0, 0])


def test_identity_attention_gives_concatenated_average(ofe):
    sf = StreamFeatures(torch.randn(2, 4, 64, 4, 4), torch.randn(2, 4, 64, 4, 4), torch.ones(2, 4, dtype=torch.bool))
    ofe.spatial_attn.mode = "identity"
    out = ofe.spatial_feature(sf)
    expected = torch.cat([sf.f_v.mean(1), sf.f_m.mean(1)], dim=1)
    torch.testing.assert_close(out, expected, rtol=0, atol=1e-6)


def test_temporal_branch_sees_last_frame(ofe):
    sf = StreamFeatures(torch.randn(1, 4, 64, 4, 4), torch.randn(1, 4, 64, 4, 4), torch.ones(1, 4, dtype=torch.bool))
    f_v2 = sf.f_v.clone()
    f_v2[:, -1] += 1.0
    with torch.no_grad():
        a = ofe.temporal_feature(sf)
        b = ofe.temporal_feature(StreamFeatures(f_v2, sf.f_m, sf.valid))
    assert not torch.allclose(a, b)


def test_disabled_branches_give_zeros(rng):
    b = _batch(rng, n=(2,))
    for key in ("ofe.use_spatial", "ofe.use_temporal"):
        ofe = ObjectFeatureExtractor(model_config("micro", **{key: False})).eval()
        with torch.no_grad():
            _, f_os, f_ot = ofe(b.frames, b.flow, b.boxes, b.valid, b.obj_clip)
        assert not (f_os if key == "ofe.use_spatial" else f_ot).any()


def test_default_profile_stream_shapes():
    cfg = model_config()
    ofe = ObjectFeatureExtractor(cfg).eval()
    sf = StreamFeatures(torch.zeros(5, 16, 512, 10, 10), torch.zeros(5, 16, 512, 10, 10),
                        torch.ones(5, 16, dtype=torch.bool))
    with torch.no_grad():
        assert ofe.spatial_feature(sf).shape == (5, 1024, 10, 10)
        assert ofe.temporal_feature(sf).shape == (5, 256)
    assert np.prod(ofe.video_lstm.weight_ih_l0.shape[1:]) == 512 * 10 * 10
