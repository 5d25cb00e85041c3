from pathlib import Path

import numpy as np
import pytest
import torch

from roadimportance.config import load_run_config, model_config
from roadimportance.data import SyntheticConfig, generate_synthetic, load_dataset, sample_clip
from roadimportance.data.clips import ClipSample
from roadimportance.data.lanes import encode_lanes


@pytest.fixture(scope="session")
def micro_cfg():
    return model_config("micro")


@pytest.fixture(scope="session")
def syn_root(tmp_path_factory):
    """Small deterministic synthetic dataset: 8 scenes of 6 frames at 64 px."""
    root = tmp_path_factory.mktemp("syn") / "data"
    generate_synthetic(SyntheticConfig(n_clips=8, n_frames=6, image_size=64, seed=3), root)
    return root


BENCH_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic_micro.yaml"


@pytest.fixture(scope="session")
def bench_run():
    return load_run_config(BENCH_CONFIG)


@pytest.fixture(scope="session")
def bench_root(tmp_path_factory, bench_run):
    """The seeded 32-clip benchmark used by the learnability checks."""
    root = tmp_path_factory.mktemp("bench") / "data"
    generate_synthetic(SyntheticConfig(**bench_run.synthetic), root)
    return root


@pytest.fixture(scope="session")
def syn_clips(syn_root):
    scenes = load_dataset(syn_root, "train") + load_dataset(syn_root, "test")
    return [sample_clip(s, 5, 4, 64) for s in scenes]


def random_clip(rng, n_objects=3, T=4, size=64, ego=0.0, clip_id="c"):
    """A ClipSample with random pixels and plausible boxes, no files involved."""
    x1 = rng.uniform(0, size * 0.6, size=(n_objects, 1))
    y1 = rng.uniform(0, size * 0.6, size=(n_objects, 1))
    w = rng.uniform(size * 0.1, size * 0.35, size=(n_objects, 1))
    h = rng.uniform(size * 0.1, size * 0.35, size=(n_objects, 1))
    drift = np.arange(T).reshape(1, T) * rng.uniform(-1, 1, size=(n_objects, 1))
    boxes = np.stack([x1 + drift, y1 + 0 * drift, x1 + w + drift, y1 + h + 0 * drift], -1)
    boxes = np.clip(boxes, 0, size).astype(np.float32)
    valid = np.ones((n_objects, T), bool)
    lanes = encode_lanes([[(size * 0.3, size), (size * 0.5, size * 0.4)], [(size * 0.7, size), (size * 0.5, size * 0.4)]])
    return ClipSample(
        frames=rng.standard_normal((T, 3, size, size)).astype(np.float32),
        flow=rng.standard_normal((T, 3, size, size)).astype(np.float32),
        boxes=boxes,
        valid=valid,
        lanes=lanes,
        seg_map=rng.uniform(size=(3, size, size)).astype(np.float32),
        ego_velocity=float(ego),
        labels=rng.integers(0, 2, n_objects),
        track_ids=np.arange(n_objects),
        clip_id=clip_id,
        t_end=T - 1,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


GRADCHECK_PARAMS = (
    "ofe.video_backbone.body.0.weight", "ofe.motion_backbone.body.3.weight", "ofe.video_lstm.weight_ih_l0",
    "ofe.spatial_attn.q_proj.weight", "disg.semantic_proj.weight", "disg.cross_attn.v_proj.weight",
    "trg.lane_encoder.0.weight", "trg.cross_attn.out_proj.weight", "trg.gate_head.weight",
    "head.project.0.weight", "head.mlp.2.bias",
)


def gradcheck_setup(rng):
    """Double-precision micro model (N=2, T=4, 4x4 ROI) in training mode with an active soft gate."""
    from roadimportance.model import ImportanceModel, collate

    cfg = model_config("micro", image_size=32)
    torch.manual_seed(3)
    model = ImportanceModel(cfg).double().train()
    torch.nn.init.normal_(model.trg.gate_head.weight, std=0.05)
    clip = random_clip(rng, 2, T=4, size=32, ego=3.0)
    clip.labels = np.array([1, 0])
    return model, collate([clip], torch.float64)


def finite_difference_errors(model, batch, per_param=2, eps=1e-6):
    """[(name, index, numeric, analytic, relative error)] for the largest-gradient entries of sampled tensors."""
    def loss_value():
        return model.loss(model(batch), batch)

    model.zero_grad()
    loss_value().backward()
    params = dict(model.named_parameters())
    gen = torch.Generator().manual_seed(0)
    errors = []
    for name in GRADCHECK_PARAMS:
        flat, grad = params[name].data.view(-1), params[name].grad.view(-1)
        # large-gradient entries keep the relative error well conditioned
        candidates = torch.topk(grad.abs(), min(8, grad.numel())).indices
        for idx in candidates[torch.randperm(len(candidates), generator=gen)[:per_param]].tolist():
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = loss_value().item()
                flat[idx] = orig - eps
                down = loss_value().item()
                flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grad[idx].item()
            rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-10)
            errors.append((name, idx, numeric, analytic, rel))
    return errors


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request, capsys):
    """Record (and print) one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(number: int, name: str, ok: bool, detail: str = ""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {name}" + (f" ({detail})" if detail else "")
        request.config.stash.setdefault(_ACCEPTANCE, []).append((number, line))
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
