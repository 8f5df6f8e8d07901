"""Self-describing weight files.

Layout::

    b"LPCNNWTS"            8-byte magic
    u8                     format version
    u32 LE                 length of the descriptor
    descriptor             UTF-8 JSON: {"architecture": ..., "meta": ...}
    float32 LE tensors     every parameter in declaration order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Network, network_from_architecture

MAGIC = b"LPCNNWTS"
VERSION = 1


class WeightFileError(ValueError):
    pass


class ArchMismatch(WeightFileError):
    pass


class CorruptFile(WeightFileError):
    pass


def to_bytes(net: Network) -> bytes:
    desc = json.dumps({"architecture": net.architecture(), "meta": net.meta},
                      sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(desc)), desc]
    for _, _, p in net.parameters():
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def save_weights(net: Network, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(net))
    return path


def from_bytes(data: bytes, expected: Network | dict | None = None) -> Network:
    head = len(MAGIC) + 5
    if len(data) < head or data[:len(MAGIC)] != MAGIC:
        raise CorruptFile("not a weight file (bad magic or truncated header)")
    version, n = struct.unpack("<BI", data[len(MAGIC):head])
    if version != VERSION:
        raise CorruptFile(f"unsupported weight format version {version}")
    if len(data) < head + n:
        raise CorruptFile("descriptor truncated")
    try:
        desc = json.loads(data[head:head + n].decode())
        arch = desc["architecture"]
        net = network_from_architecture(arch)
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"unreadable architecture descriptor: {exc}") from exc

    if expected is not None:
        want = expected.architecture() if isinstance(expected, Network) else expected
        if len(want["layers"]) != len(arch["layers"]):
            raise ArchMismatch(f"file has {len(arch['layers'])} layers,"
                               f" expected {len(want['layers'])}")
        if want != arch:
            raise ArchMismatch("layer configuration or input shape differs from expected")

    offset = head + n
    for i, name, p in list(net.parameters()):
        nbytes = p.size * 4
        if offset + nbytes > len(data):
            raise CorruptFile(f"parameter {name} of layer {i} truncated")
        arr = np.frombuffer(data, dtype="<f4", count=p.size, offset=offset)
        net.layers[i].params[name] = arr.reshape(p.shape).astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise CorruptFile(f"{len(data) - offset} trailing bytes after parameters")
    net.meta = desc.get("meta", {})
    return net


def load_weights(path, expected: Network | dict | None = None) -> Network:
    return from_bytes(Path(path).read_bytes(), expected)
