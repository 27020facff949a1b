"""Tagged binary checkpoint bundling store, mining tables and encoder weights.

Layout: ``b"PMCK"``, then sections of ``tag (4 ASCII bytes) | length u64 |
payload``. Payloads use each component's own little-endian framing.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

from .encoder import LinearEncoder
from .memory import PrototypeStore
from .mining import DoppelgangerTable, HardnessTable

MAGIC = b"PMCK"
_LEN = struct.Struct("<Q")

_READERS = {
    b"STOR": ("store", PrototypeStore.read),
    b"DOPP": ("doppelgangers", DoppelgangerTable.read),
    b"HARD": ("hardness", HardnessTable.read),
    b"ENCR": ("encoder", LinearEncoder.read),
    b"WMAT": ("weights", LinearEncoder.read),
}
_TAGS = {name: tag for tag, (name, _) in _READERS.items()}


def save_checkpoint(path: str | Path, **parts) -> None:
    """Write any of ``store``, ``doppelgangers``, ``hardness``, ``encoder``, ``weights``.

    ``weights`` is a full class weight matrix wrapped as a LinearEncoder-shaped
    block (rows = classes).
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, part in parts.items():
            if part is None:
                continue
            if name not in _TAGS:
                raise ValueError(f"unknown checkpoint part {name!r}")
            buf = io.BytesIO()
            part.write(buf)
            payload = buf.getvalue()
            fh.write(_TAGS[name] + _LEN.pack(len(payload)) + payload)


def load_checkpoint(path: str | Path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint file")
    out = {}
    pos = 4
    while pos < len(data):
        tag = data[pos : pos + 4]
        (length,) = _LEN.unpack_from(data, pos + 4)
        start = pos + 12
        payload = data[start : start + length]
        if len(payload) != length:
            raise ValueError("truncated checkpoint")
        if tag not in _READERS:
            raise ValueError(f"unknown section {tag!r}")
        name, reader = _READERS[tag]
        out[name] = reader(io.BytesIO(payload))
        pos = start + length
    return out
