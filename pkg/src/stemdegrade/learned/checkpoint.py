"""ATDM model files: magic line, one-line JSON header, float32 LE tensors."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError
from .network import AffineDecayNet, ModelConfig

MAGIC = b"ATDM1\n"


def save_model(model: AffineDecayNet, path) -> None:
    state = model.state_dict()
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = {"config": model.config.to_dict(), "seed": int(model.seed), "tensors": manifest}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for k, v in state.items():
            fh.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def load_model(path, dtype=torch.float32) -> AffineDecayNet:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError("bad magic; not an ATDM model file", 0)
    end = data.find(b"\n", len(MAGIC))
    if end < 0:
        raise FormatError("unterminated header", len(MAGIC))
    try:
        header = json.loads(data[len(MAGIC):end].decode("utf-8"))
        config = ModelConfig(**header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed header: {exc}", len(MAGIC)) from exc
    model = AffineDecayNet(config, seed=int(header.get("seed", 0)))
    offset = end + 1
    state = {}
    for entry in manifest:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = 4 * n
        if offset + nbytes > len(data):
            raise FormatError(f"truncated payload for tensor {entry['name']!r}", offset)
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += nbytes
    if offset != len(data):
        raise FormatError("trailing bytes after payload", offset)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise FormatError(f"tensor manifest does not match config: {exc}", len(MAGIC)) from exc
    return model.to(dtype)
