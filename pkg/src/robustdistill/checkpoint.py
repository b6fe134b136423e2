"""Self-describing binary checkpoint container.

Byte layout (documented in docs/checkpoint_format.md and tested for bit-exact
round trips):

    bytes 0..7    magic b"RDLCKPT1"
    bytes 8..11   header length ``H`` as uint32 little-endian
    bytes 12..    UTF-8 JSON header of ``H`` bytes
    remainder     parameter payload: raw little-endian IEEE-754 arrays,
                  C order, concatenated in the order listed in the header

The header carries ``format_version``, the architecture descriptor, the
build seed, the parameter dtype, and one entry per tensor (name, shape).
"""

import json
import os
import tempfile

import numpy as np
import torch

from .errors import InvalidInputError
from .models import Classifier, ModelSpec, build_model, resolve_dtype

MAGIC = b"RDLCKPT1"
FORMAT_VERSION = 1

_NUMPY_CODES = {torch.float64: "<f8", torch.float32: "<f4"}


def save_checkpoint(model: Classifier, path):
    """Write ``model`` to ``path`` atomically (temp file + rename)."""
    code = _NUMPY_CODES[model.dtype]
    tensors = []
    blobs = []
    for name, p in model.named_parameters():
        arr = p.detach().numpy().astype(code, copy=False)
        tensors.append({"name": name, "shape": list(p.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.spec.to_dict(),
        "seed": int(model.seed),
        "dtype": code,
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(len(header_bytes).to_bytes(4, "little"))
            f.write(header_bytes)
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def load_checkpoint(path) -> Classifier:
    """Rebuild a classifier from a checkpoint file; bit-exact inverse of save."""
    with open(os.fspath(path), "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint file (bad magic)")
    header_len = int.from_bytes(data[8:12], "little")
    header = json.loads(data[12 : 12 + header_len].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format version {header.get('format_version')}")
    code = header["dtype"]
    torch_dtype = {"<f8": torch.float64, "<f4": torch.float32}.get(code)
    if torch_dtype is None:
        raise InvalidInputError(f"{path}: unsupported parameter dtype {code!r}")
    spec = ModelSpec.from_dict(header["architecture"])
    model = build_model(spec, header["seed"], dtype=torch_dtype)
    params = dict(model.named_parameters())
    offset = 12 + header_len
    with torch.no_grad():
        for entry in header["tensors"]:
            p = params.get(entry["name"])
            if p is None:
                raise InvalidInputError(f"{path}: unknown tensor {entry['name']!r}")
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(code).itemsize if shape else np.dtype(code).itemsize
            nbytes = max(nbytes, 0)
            raw = data[offset : offset + nbytes]
            if len(raw) != nbytes:
                raise InvalidInputError(f"{path}: truncated payload at tensor {entry['name']!r}")
            arr = np.frombuffer(raw, dtype=code).reshape(shape).astype(resolve_numpy(torch_dtype), copy=True)
            p.copy_(torch.from_numpy(arr))
            offset += nbytes
    if offset != len(data):
        raise InvalidInputError(f"{path}: {len(data) - offset} trailing bytes after payload")
    return model.freeze()


def resolve_numpy(torch_dtype):
    return {torch.float64: np.float64, torch.float32: np.float32}[resolve_dtype(torch_dtype)]
