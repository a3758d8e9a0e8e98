"""Self-describing checkpoint files.

Layout::

    b"TMCKPT\\0\\0"                 8-byte magic
    uint32 little-endian          header length in bytes
    header                        UTF-8 JSON
    payload                       little-endian float32 tensors, back to back

The header holds ``format_version``, the network config, normalization
constants, training provenance and a ``tensors`` list of
``{"name", "shape", "offset", "count"}`` entries (offset/count in float32
elements). Parameters are stored as float32 and widened to float64 on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import IMAGENET_MEAN, IMAGENET_STD
from .network import NetworkConfig, TinyNet

MAGIC = b"TMCKPT\0\0"
FORMAT_VERSION = 1
SUFFIX = ".tmck"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    net: TinyNet
    norm_mean: tuple[float, float, float] = IMAGENET_MEAN
    norm_std: tuple[float, float, float] = IMAGENET_STD
    provenance: dict = field(default_factory=dict)
    sha256: str | None = None

    @property
    def config(self) -> NetworkConfig:
        return self.net.config


def save_checkpoint(path: str | Path, ckpt: ModelCheckpoint) -> str:
    """Write ``ckpt``; returns the SHA-256 of the written bytes."""
    net = ckpt.net
    tensors = dict(net.params)
    tensors["norm.lab_offset"] = net.lab_offset
    tensors["norm.lab_scale"] = net.lab_scale
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32",
        "endianness": "little",
        "network": net.config.to_dict(),
        "normalization": {"mean": list(ckpt.norm_mean), "std": list(ckpt.norm_std), "input_size": net.config.input_size},
        "provenance": ckpt.provenance,
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks)
    Path(path).write_bytes(blob)
    digest = hashlib.sha256(blob).hexdigest()
    ckpt.sha256 = digest
    return digest


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    payload = np.frombuffer(blob, dtype="<f4", offset=12 + hlen)
    tensors = {}
    for e in header["tensors"]:
        end = e["offset"] + e["count"]
        if end > payload.size:
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        tensors[e["name"]] = payload[e["offset"] : end].astype(np.float64).reshape(e["shape"])
    cfg = NetworkConfig.from_dict(header["network"])
    net = TinyNet(
        cfg,
        {k: v for k, v in tensors.items() if not k.startswith("norm.")},
        tensors["norm.lab_offset"],
        tensors["norm.lab_scale"],
    )
    expected = set(TinyNet.init(cfg).params)
    if set(net.params) != expected:
        raise CheckpointError(f"{path}: tensor set does not match the declared architecture")
    norm = header["normalization"]
    return ModelCheckpoint(
        net,
        tuple(norm["mean"]),
        tuple(norm["std"]),
        header.get("provenance", {}),
        hashlib.sha256(blob).hexdigest(),
    )


def find_checkpoints(directory: str | Path) -> list[Path]:
    return sorted(Path(directory).glob(f"*{SUFFIX}"))
