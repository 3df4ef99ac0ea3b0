"""Parameter checkpoints: JSON manifest + little-endian float32 blob.

Layout: 4-byte magic, uint32 little-endian manifest length, UTF-8 JSON
manifest, raw tensor data. The manifest stores names, shapes, and byte
offsets into the blob. Round trips are bit-exact.
"""

import json
import numpy as np
from pathlib import Path

from ..autodiff import Tensor
from ..errors import ContractViolation

MAGIC = b"PHCK"
FORMAT_VERSION = 1


def save_params(path, params):
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(params):
        t = params[name]
        arr = np.ascontiguousarray(
            (t.data if isinstance(t, Tensor) else np.asarray(t)), dtype="<f4")
        entries[name] = {"shape": list(arr.shape), "offset": offset,
                         "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"format_version": FORMAT_VERSION,
                           "tensors": entries}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(manifest), dtype="<u4").tobytes())
        f.write(manifest)
        for b in blobs:
            f.write(b)
    return path


def load_params(path):
    """Read a checkpoint back into {name: float32 ndarray}."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContractViolation(f"{path}: not a checkpoint file")
    n = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    manifest = json.loads(raw[8:8 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ContractViolation(
            f"{path}: unsupported format version {manifest.get('format_version')}")
    base = 8 + n
    out = {}
    for name, e in manifest["tensors"].items():
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + e["nbytes"]], dtype="<f4")
        out[name] = arr.reshape(e["shape"]).copy()
    return out


def to_tensors(arrays, requires_grad=True):
    return {k: Tensor(v, requires_grad=requires_grad, name=k)
            for k, v in arrays.items()}


def params_checksum(params):
    """Order-independent digest of parameter bytes, for freeze checks."""
    import hashlib
    h = hashlib.sha256()
    for name in sorted(params):
        t = params[name]
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return h.hexdigest()
