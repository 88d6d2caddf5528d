"""Self-describing binary checkpoint container.

Layout: 4-byte magic "GDL1", u32 format version, u64 header length, UTF-8 JSON
header, then raw tensor payloads. Every tensor is float64 little-endian,
row-major, in exactly the order the header lists (attribute embedders appear
in canonical attribute order because module registration order follows it).
A temporal checkpoint is a base checkpoint with a control section appended;
the header records the SHA-256 of the base payload so the provenance of a
fine-tuned control branch stays checkable.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import GenerationModel, ModelConfig

MAGIC = b"GDL1"
VERSION = 1


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().to(torch.float64).numpy().astype("<f8").tobytes()


def _payload(state: dict[str, torch.Tensor]) -> tuple[list[dict], bytes]:
    entries = []
    chunks = []
    for name, tensor in state.items():
        entries.append({"name": name, "shape": list(tensor.shape)})
        chunks.append(_tensor_bytes(tensor))
    return entries, b"".join(chunks)


def _write(path: str | Path, header: dict, payload: bytes) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)


def save_checkpoint(path: str | Path, model: GenerationModel) -> None:
    tensors, payload = _payload(model.state_dict())
    header = {
        "kind": "single",
        "config": model.config.to_dict(),
        "tensors": tensors,
    }
    _write(path, header, payload)


def save_temporal_checkpoint(path: str | Path, temporal) -> None:
    """Base payload + appended control section with the base payload's hash."""
    base_tensors, base_payload = _payload(temporal.base.state_dict())
    ctrl_tensors, ctrl_payload = _payload(temporal.control.state_dict())
    header = {
        "kind": "temporal",
        "config": temporal.base.config.to_dict(),
        "tensors": base_tensors,
        "control": {
            "tensors": ctrl_tensors,
            "base_hash": hashlib.sha256(base_payload).hexdigest(),
        },
    }
    _write(path, header, base_payload + ctrl_payload)


def _read_tensors(
    buf: bytes, offset: int, entries: list[dict], dtype: torch.dtype
) -> tuple[dict[str, torch.Tensor], int]:
    out = {}
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(buf):
            raise ValueError(f"checkpoint truncated inside tensor {e['name']!r}")
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
        out[e["name"]] = torch.from_numpy(arr.copy()).reshape(shape).to(dtype)
        offset += nbytes
    return out, offset


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32):
    """Rebuild the model (GenerationModel, or TemporalModel for control files)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    if 16 + header_len > len(raw):
        raise ValueError(f"{path}: checkpoint truncated inside header")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    kind = header.get("kind")
    if kind not in ("single", "temporal"):
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")

    config = ModelConfig.from_dict(header["config"])
    model = GenerationModel(config).to(dtype)
    base_state, offset = _read_tensors(raw, 16 + header_len, header["tensors"], dtype)
    model.load_state_dict(base_state)
    if kind == "single":
        return model

    from .temporal import TemporalControl, TemporalModel

    stored = header["control"]["base_hash"]
    actual = hashlib.sha256(raw[16 + header_len : offset]).hexdigest()
    if stored != actual:
        raise ValueError(f"{path}: base payload hash mismatch (file corrupt?)")
    control = TemporalControl(
        embed_dim=config.embed_dim, base=config.unet_base, mid=config.unet_mid
    ).to(dtype)
    ctrl_state, _ = _read_tensors(raw, offset, header["control"]["tensors"], dtype)
    control.load_state_dict(ctrl_state)
    return TemporalModel(base=model, control=control)
