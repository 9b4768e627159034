"""Checkpoints: binary parameter blob plus a JSON sidecar.

The sidecar carries ``{"version": 1, "config": {...}, "epoch": N,
"seed": S, "metrics": {...}, "checksum": "sha256:..."}``; the checksum is
over the blob bytes, so truncation or bit rot is rejected before any
tensor is materialized. Loading never reshapes silently: every stored
tensor must match the target model's shape exactly.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import torch
from torch import nn

from bonetplus.errors import CheckpointError
from bonetplus.model import BoNetPlus, BoNetPlusConfig

CHECKPOINT_VERSION = 1


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via temp file + rename so readers never see partial content."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_checkpoint(
    path: Path | str,
    model: BoNetPlus | dict,
    cfg: BoNetPlusConfig,
    epoch: int = 0,
    seed: int = 0,
    metrics: dict | None = None,
) -> None:
    """Persist parameters and metadata; both files land atomically."""
    path = Path(path)
    state = model.state_dict() if isinstance(model, nn.Module) else model
    buf = io.BytesIO()
    torch.save(state, buf)
    blob = buf.getvalue()
    atomic_write_bytes(path, blob)
    sidecar = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "epoch": int(epoch),
        "seed": int(seed),
        "metrics": metrics or {},
        "checksum": "sha256:" + hashlib.sha256(blob).hexdigest(),
    }
    atomic_write_text(_sidecar_path(path), json.dumps(sidecar, indent=1))


def load_checkpoint(path: Path | str) -> tuple[dict, BoNetPlusConfig, dict]:
    """Return (state_dict, config, meta); raises CheckpointError on any defect."""
    path = Path(path)
    sidecar_path = _sidecar_path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint blob missing: {path}")
    if not sidecar_path.is_file():
        raise CheckpointError(f"checkpoint sidecar missing: {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    version = sidecar.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r} in {sidecar_path}")
    blob = path.read_bytes()
    digest = "sha256:" + hashlib.sha256(blob).hexdigest()
    if digest != sidecar.get("checksum"):
        raise CheckpointError(
            f"checksum mismatch for {path}: file is corrupted or truncated"
        )
    state = torch.load(io.BytesIO(blob), weights_only=True)
    cfg = BoNetPlusConfig.from_dict(sidecar["config"])
    meta = {k: sidecar[k] for k in ("epoch", "seed", "metrics")}
    return state, cfg, meta


def apply_state(model: BoNetPlus, state: dict) -> None:
    """Load a state dict, naming the first incompatible tensor."""
    target = model.state_dict()
    missing = sorted(set(target) - set(state))
    unexpected = sorted(set(state) - set(target))
    if missing:
        raise CheckpointError(f"checkpoint lacks tensor {missing[0]!r}")
    if unexpected:
        raise CheckpointError(f"checkpoint has unexpected tensor {unexpected[0]!r}")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(target[name].shape):
            raise CheckpointError(
                f"tensor {name!r} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(target[name].shape)}"
            )
    model.load_state_dict(state)


def build_model_from_checkpoint(path: Path | str) -> tuple[BoNetPlus, BoNetPlusConfig, dict]:
    """Reconstruct the model a checkpoint was saved from."""
    state, cfg, meta = load_checkpoint(path)
    model = BoNetPlus(cfg)
    apply_state(model, state)
    model.eval()
    return model, cfg, meta
