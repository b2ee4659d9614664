"""Binary checkpoint container for a learned relation prompt.

Layout (all integers little-endian)::

    magic       4 bytes   b"RVCK"
    version     uint16
    D           uint32
    step_count  uint64
    embedding   D * float64
    init_word   uint32 length + utf-8
    config      uint32 length + utf-8 JSON (canonical, sorted keys)
    backbone    uint32 length + ascii hex digest
    checksum    32 bytes  sha256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import BackboneMismatchWarning, CorruptCheckpoint
from .inversion import InversionConfig, RelationPrompt

MAGIC = b"RVCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode(prompt: RelationPrompt) -> bytes:
    emb = np.ascontiguousarray(prompt.embedding, dtype="<f8")
    config_json = prompt.config.to_json() if prompt.config is not None else ""
    body = (
        _HEADER.pack(MAGIC, FORMAT_VERSION, emb.shape[0], prompt.step_count)
        + emb.tobytes()
        + _pack_str(prompt.init_word)
        + _pack_str(config_json)
        + _pack_str(prompt.backbone_digest or "")
    )
    return body + hashlib.sha256(body).digest()


def save(prompt: RelationPrompt, path) -> Path:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode(prompt))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def decode(data: bytes) -> RelationPrompt:
    if len(data) < _HEADER.size + 32:
        raise CorruptCheckpoint("checkpoint truncated")
    body, checksum = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CorruptCheckpoint("checksum mismatch")
    magic, version, dim, steps = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version}")
    off = _HEADER.size
    emb = np.frombuffer(body, dtype="<f8", count=dim, offset=off).astype(np.float64)
    off += 8 * dim

    def take_str():
        nonlocal off
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
        s = body[off : off + n].decode("utf-8")
        off += n
        return s

    try:
        init_word, config_json, digest = take_str(), take_str(), take_str()
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CorruptCheckpoint("trailing bytes in checkpoint")
    config = InversionConfig.from_dict(json.loads(config_json)) if config_json else None
    return RelationPrompt(emb, init_word, int(steps), config=config, backbone_digest=digest or None)


def load(path, backbone_digest: str | None = None) -> RelationPrompt:
    """Read and verify a checkpoint.

    A differing ``backbone_digest`` only warns; the embedding is still usable
    for inspection against another backbone.
    """
    prompt = decode(Path(path).read_bytes())
    if backbone_digest is not None and prompt.backbone_digest != backbone_digest:
        warnings.warn(
            f"checkpoint was trained against backbone {prompt.backbone_digest}, loading into {backbone_digest}",
            BackboneMismatchWarning,
            stacklevel=2,
        )
    return prompt


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
