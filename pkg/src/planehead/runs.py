"""Run persistence: write a training or edit run to disk with a hash manifest.

A run directory holds a config snapshot, the seed, any checkpoints and
report files, plus ``manifest.json`` listing every file with its sha256.
Reloading verifies the hashes, so a run either comes back bit-exact or
fails loudly naming the corrupt file.
"""

import hashlib
import json
import os

from .backbone.checkpoint import load_params, save_params
from .config import Config
from .errors import ContractViolation

MANIFEST_NAME = "manifest.json"
SCHEMA_VERSION = 1


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def persist_run(dirpath, *, seed=0, config=None, checkpoints=None, reports=None):
    """Write run artifacts to dirpath and return the manifest dict.

    checkpoints maps name -> params dict (Tensor or ndarray values), each
    saved as <name>.ckpt.  reports maps a relative filename to its payload:
    dict/list payloads become JSON, str becomes text, bytes raw.
    """
    os.makedirs(dirpath, exist_ok=True)
    written = []

    if config is not None:
        config.to_json(os.path.join(dirpath, "config.json"))
        written.append("config.json")

    for name, params in (checkpoints or {}).items():
        if os.sep in name or not name:
            raise ContractViolation(f"checkpoint name {name!r} must be a bare filename stem")
        rel = name + ".ckpt"
        save_params(os.path.join(dirpath, rel), params)
        written.append(rel)

    for rel, payload in (reports or {}).items():
        if os.path.isabs(rel) or ".." in rel.split(os.sep):
            raise ContractViolation(f"report path {rel!r} must stay inside the run dir")
        full = os.path.join(dirpath, rel)
        os.makedirs(os.path.dirname(full) or dirpath, exist_ok=True)
        if isinstance(payload, bytes):
            with open(full, "wb") as f:
                f.write(payload)
        elif isinstance(payload, str):
            with open(full, "w") as f:
                f.write(payload)
        else:
            with open(full, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
        written.append(rel)

    # the manifest covers everything under the run dir, including artifacts
    # written by other savers before this call (edit results, sweep files)
    for base, _, names in os.walk(dirpath):
        for n in names:
            rel = os.path.relpath(os.path.join(base, n), dirpath)
            if rel != MANIFEST_NAME and rel not in written:
                written.append(rel)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": int(seed),
        "files": {rel: file_sha256(os.path.join(dirpath, rel)) for rel in sorted(written)},
    }
    with open(os.path.join(dirpath, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_run(dirpath):
    """Reload a persisted run, verifying every file hash from the manifest.

    Returns {"seed", "config", "checkpoints", "reports", "manifest"} where
    checkpoints holds raw ndarray dicts and reports raw bytes.
    """
    mpath = os.path.join(dirpath, MANIFEST_NAME)
    if not os.path.isfile(mpath):
        raise ContractViolation(f"no run manifest at {mpath}")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ContractViolation(
            f"unsupported run schema {manifest.get('schema_version')!r} in {mpath}")

    out = {"seed": manifest.get("seed", 0), "config": None,
           "checkpoints": {}, "reports": {}, "manifest": manifest}
    for rel, expect in manifest["files"].items():
        full = os.path.join(dirpath, rel)
        if not os.path.isfile(full):
            raise ContractViolation(f"run file missing: {full}")
        got = file_sha256(full)
        if got != expect:
            raise ContractViolation(f"hash mismatch for {full}: {got} != {expect}")
        if rel == "config.json":
            out["config"] = Config.from_json(full)
        elif rel.endswith(".ckpt"):
            out["checkpoints"][rel[:-len(".ckpt")]] = load_params(full)
        else:
            with open(full, "rb") as f:
                out["reports"][rel] = f.read()
    return out
