"""Versioned checkpoint container.

Layout (little-endian)::

    8 bytes   magic  b"LLBCKPT\\0"
    4 bytes   format version (uint32)
    8 bytes   header length N (uint64)
    N bytes   UTF-8 JSON header: config, config_hash, payload_len, payload_sha256
    rest      payload: torch.save() of the parameter state dict
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from pathlib import Path

import torch

from .config import LLBConfig
from .model import LLBModel

MAGIC = b"LLBCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(params: dict[str, torch.Tensor] | torch.nn.Module, cfg: LLBConfig, path, extra=None):
    state = params.state_dict() if isinstance(params, torch.nn.Module) else params
    buf = io.BytesIO()
    torch.save({k: v.detach().cpu() for k, v in state.items()}, buf)
    payload = buf.getvalue()
    header = {
        "config_hash": cfg.model_hash(),
        "config": cfg.to_dict(),
        "payload_len": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(hb)))
        fh.write(hb)
        fh.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path, expected_hash: str | None = None):
    """Returns ``(state_dict, header)``. Nothing is returned unless every check passes."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not an LLB checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = raw[start + hlen:]
    if len(payload) != header.get("payload_len"):
        raise CheckpointError(f"{path}: truncated payload ({len(payload)} of {header.get('payload_len')} bytes)")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    if expected_hash is not None and header.get("config_hash") != expected_hash:
        raise CheckpointError(
            f"{path}: config hash {header.get('config_hash')} does not match expected {expected_hash}")
    state = torch.load(io.BytesIO(payload), weights_only=True)
    return state, header


def load_model(path, cfg: LLBConfig | None = None) -> tuple[LLBModel, LLBConfig]:
    """Rebuild the model. With ``cfg`` given, its model section must hash-match the file."""
    state, header = load_checkpoint(path, cfg.model_hash() if cfg is not None else None)
    if cfg is None:
        cfg = LLBConfig.from_dict(header["config"])
    model = LLBModel(cfg.model, cfg.learner)
    model.load_state_dict(state)
    model.eval()
    return model, cfg
