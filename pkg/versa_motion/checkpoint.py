"""Checkpoint container: JSON manifest plus a raw float32 blob.

File layout::

    b"VCKPT1\\n" | uint64 little-endian manifest length | manifest JSON | blob

The manifest lists ``{name, shape, offset}`` for every tensor; offsets are in
bytes from the start of the blob. Optimizer moments are stored under the
reserved ``__optim__/`` namespace.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, ParseError
from .optim import AdamState
from .utils import atomic_write_bytes, sha256_bytes

MAGIC = b"VCKPT1\n"
OPTIM_PREFIX = "__optim__/"


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def hash_config(config_dict):
    """SHA-256 of the canonical JSON of a config dict."""
    return sha256_bytes(canonical_json(config_dict).encode("utf-8"))


@dataclass
class Checkpoint:
    """Named tensors plus the config they were produced under."""

    kind: str
    config: dict
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        return hash_config(self.config)

    def subset(self, prefix):
        """Tensors under ``prefix`` with the prefix stripped."""
        return {name[len(prefix):]: value for name, value in self.tensors.items()
                if name.startswith(prefix)}

    def __repr__(self):
        return f"Checkpoint(kind={self.kind}, tensors={len(self.tensors)}, hash={self.config_hash[:12]})"


def add_optimizer_state(tensors, meta, state):
    """Store Adam moments into ``tensors`` and its scalars into ``meta``."""
    for name in sorted(state.m):
        tensors[f"{OPTIM_PREFIX}m/{name}"] = state.m[name]
        tensors[f"{OPTIM_PREFIX}v/{name}"] = state.v[name]
    meta["optimizer"] = {"lr": state.lr, "beta1": state.beta1, "beta2": state.beta2,
                         "eps": state.eps, "step": state.step}


def optimizer_state(checkpoint):
    """Rebuild an :class:`AdamState` from a checkpoint, or None if absent."""
    scalars = checkpoint.meta.get("optimizer")
    if scalars is None:
        return None
    state = AdamState(**scalars)
    for name, value in checkpoint.tensors.items():
        if name.startswith(OPTIM_PREFIX + "m/"):
            state.m[name[len(OPTIM_PREFIX) + 2:]] = value.astype(np.float64)
        elif name.startswith(OPTIM_PREFIX + "v/"):
            state.v[name[len(OPTIM_PREFIX) + 2:]] = value.astype(np.float64)
    return state


def checkpoint_to_bytes(checkpoint):
    entries, chunks, offset = [], [], 0
    for name in sorted(checkpoint.tensors):
        array = np.ascontiguousarray(checkpoint.tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(array.tobytes())
        offset += array.nbytes
    manifest = {
        "kind": checkpoint.kind,
        "config": checkpoint.config,
        "config_hash": checkpoint.config_hash,
        "meta": checkpoint.meta,
        "tensors": entries,
    }
    body = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(body)) + body + b"".join(chunks)


def save_checkpoint(path, checkpoint):
    """Atomically write a checkpoint; returns the SHA-256 of the written bytes."""
    data = checkpoint_to_bytes(checkpoint)
    atomic_write_bytes(path, data)
    return sha256_bytes(data)


def checkpoint_from_bytes(data):
    """
    Parse checkpoint bytes.

    Raises:
        ParseError: On a malformed file
        CompatibilityError: If the embedded hash does not match the embedded config
    """
    if not data.startswith(MAGIC):
        raise ParseError("not a VCKPT1 checkpoint")
    start = len(MAGIC)
    if len(data) < start + 8:
        raise ParseError("truncated checkpoint header")
    (length,) = struct.unpack_from("<Q", data, start)
    start += 8
    try:
        manifest = json.loads(data[start:start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"checkpoint manifest is not valid JSON: {exc}")
    blob = memoryview(data)[start + length:]
    checkpoint = Checkpoint(kind=manifest["kind"], config=manifest["config"], meta=manifest.get("meta", {}))
    if checkpoint.config_hash != manifest.get("config_hash"):
        raise CompatibilityError("checkpoint config hash does not match its embedded config")
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + 4 * count
        if end > len(blob):
            raise ParseError(f"tensor {entry['name']} extends past the end of the blob")
        array = np.frombuffer(blob[entry["offset"]:end], dtype="<f4").reshape(entry["shape"])
        checkpoint.tensors[entry["name"]] = array.astype(np.float32)
    return checkpoint


def load_checkpoint(path, expected_kind=None):
    with open(path, "rb") as fh:
        checkpoint = checkpoint_from_bytes(fh.read())
    if expected_kind is not None and checkpoint.kind != expected_kind:
        raise CompatibilityError(f"{path} holds a {checkpoint.kind} checkpoint, expected {expected_kind}")
    return checkpoint
