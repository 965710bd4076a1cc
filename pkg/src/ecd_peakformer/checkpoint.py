"""Checkpoint archive: a zip holding ``manifest.json`` plus raw little-endian
float64 tensor blobs, one per parameter path.  Entries are written in sorted
order with fixed timestamps so identical states give identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import torch

FORMAT = "ecd-peakformer-checkpoint"
VERSION = 1
_EPOCH_1980 = (1980, 1, 1, 0, 0, 0)


def tensor_to_bytes(t) -> bytes:
    arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def bytes_to_array(raw: bytes, shape) -> np.ndarray:
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


@dataclass
class Checkpoint:
    model_state: dict[str, np.ndarray]
    config: dict
    epoch: int
    optimizer_step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)
    torch_rng: Optional[bytes] = None
    numpy_rng: Optional[dict] = None
    best: dict = field(default_factory=dict)
    splits: dict[str, list[str]] = field(default_factory=dict)

    def model(self):
        from .model import ECDFormer
        from .training import TrainConfig

        cfg = TrainConfig.from_dict(self.config)
        net = ECDFormer(cfg.model_config(), seed=cfg.seed)
        state = {k: torch.from_numpy(v) for k, v in self.model_state.items()}
        net.load_state_dict(state)
        net.eval()
        return net

    def blobs(self) -> dict[str, bytes]:
        out = {}
        for prefix, group in (("model", self.model_state), ("optim/exp_avg", self.exp_avg),
                              ("optim/exp_avg_sq", self.exp_avg_sq)):
            for name, arr in group.items():
                out[f"tensors/{prefix}/{name}.f64"] = tensor_to_bytes(arr)
        return out

    def manifest(self) -> dict[str, Any]:
        shapes = {}
        for prefix, group in (("model", self.model_state), ("optim/exp_avg", self.exp_avg),
                              ("optim/exp_avg_sq", self.exp_avg_sq)):
            for name, arr in group.items():
                shapes[f"tensors/{prefix}/{name}.f64"] = list(np.shape(arr))
        return {
            "format": FORMAT,
            "version": VERSION,
            "dtype": "float64-le",
            "epoch": self.epoch,
            "config": self.config,
            "best": self.best,
            "splits": self.splits,
            "optimizer": {"type": "AdamW", "step": self.optimizer_step},
            "numpy_rng": self.numpy_rng,
            "tensors": shapes,
        }

    def save(self, path) -> None:
        entries = dict(self.blobs())
        entries["manifest.json"] = json.dumps(self.manifest(), indent=1, sort_keys=True).encode()
        if self.torch_rng is not None:
            entries["rng/torch.u8"] = self.torch_rng
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
            for name in sorted(entries):
                info = zipfile.ZipInfo(name, date_time=_EPOCH_1980)
                info.external_attr = 0o644 << 16
                zf.writestr(info, entries[name])
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with zipfile.ZipFile(path) as zf:
            try:
                manifest = json.loads(zf.read("manifest.json"))
            except KeyError:
                raise ValueError(f"{path}: not a checkpoint archive (no manifest.json)") from None
            if manifest.get("format") != FORMAT:
                raise ValueError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
            groups: dict[str, dict[str, np.ndarray]] = {"model": {}, "optim/exp_avg": {},
                                                         "optim/exp_avg_sq": {}}
            for fname, shape in manifest["tensors"].items():
                rest = fname[len("tensors/"):-len(".f64")]
                prefix = next(p for p in sorted(groups, key=len, reverse=True) if rest.startswith(p + "/"))
                groups[prefix][rest[len(prefix) + 1:]] = bytes_to_array(zf.read(fname), shape)
            rng = zf.read("rng/torch.u8") if "rng/torch.u8" in zf.namelist() else None
        return cls(groups["model"], manifest["config"], manifest["epoch"],
                   manifest["optimizer"]["step"], groups["optim/exp_avg"], groups["optim/exp_avg_sq"],
                   rng, manifest.get("numpy_rng"), manifest.get("best", {}), manifest.get("splits", {}))
