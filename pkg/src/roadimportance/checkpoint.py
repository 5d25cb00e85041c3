"""Checkpoint container: named little-endian arrays plus a JSON header, stored as ``.npz``."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig, model_config_from_dict, to_dict, train_config_from_dict

FORMAT = "roadimportance-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _le(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def normalization(self) -> dict:
        return {"mean": list(self.model_config.mean), "std": list(self.model_config.std)}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        header = {
            "format": FORMAT,
            "version": VERSION,
            "model_config": to_dict(self.model_config),
            "train_config": to_dict(self.train_config),
            "normalization": self.normalization,
            "epoch": self.epoch,
            "step": self.step,
            "history": self.history,
        }
        arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
        arrays.update({f"param/{k}": _le(v) for k, v in self.params.items()})
        arrays.update({f"optim/{k}": _le(v) for k, v in self.optimizer.items()})
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.getvalue())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            with np.load(Path(path), allow_pickle=False) as data:
                header = json.loads(bytes(data["__header__"]).decode())
                params = {k[6:]: data[k] for k in data.files if k.startswith("param/")}
                optim = {k[6:]: data[k] for k in data.files if k.startswith("optim/")}
        except (OSError, KeyError, ValueError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path} is not a {FORMAT} file")
        if header.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        return cls(
            model_config=model_config_from_dict(header["model_config"]),
            train_config=train_config_from_dict(header["train_config"]),
            params=params,
            optimizer=optim,
            epoch=int(header["epoch"]),
            step=int(header["step"]),
            history=list(header["history"]),
        )

    @classmethod
    def from_model(cls, model, train_config: TrainConfig, optimizer=None, epoch: int = 0, step: int = 0,
                   history: list[dict] | None = None) -> "Checkpoint":
        params = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        optim = {}
        if optimizer is not None:
            names = {id(p): n for n, p in model.named_parameters()}
            for group in optimizer.param_groups:
                for p in group["params"]:
                    for key, value in optimizer.state.get(p, {}).items():
                        if torch.is_tensor(value):
                            optim[f"{names[id(p)]}/{key}"] = value.detach().cpu().numpy().copy()
        return cls(model.cfg, train_config, params, optim, epoch, step, list(history or []))

    def build_model(self):
        from .model import ImportanceModel

        model = ImportanceModel(self.model_config)
        model.to(torch.float64 if self.train_config.precision == "float64" else torch.float32)
        load_params(model, self.params)
        return model


def load_params(model, params: dict[str, np.ndarray]) -> None:
    state = model.state_dict()
    missing = sorted(set(state) - set(params))
    extra = sorted(set(params) - set(state))
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, tensor in state.items():
        arr = params[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {tuple(tensor.shape)}")
    model.load_state_dict({k: torch.from_numpy(np.array(v, dtype=v.dtype.newbyteorder("="))) for k, v in
                           params.items()})
