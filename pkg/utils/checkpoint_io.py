"""
AKHW checkpoint wire format (all integers little-endian):

    magic     4 bytes  b"AKHW"
    version   u32
    meta_len  u32, then meta_len bytes of UTF-8 JSON (sorted keys):
              epoch, adam t/beta1/beta2/eps, class names, architecture, precision
    count     u32 entries, each:
              name_len u32 + UTF-8 name, dtype u8 (0 = float32, 1 = float64),
              rank u32, rank x u32 extents, raw little-endian values
    checksum  u64, first 8 bytes of BLAKE2b over every preceding byte

Entry names are prefixed: param/, buffer/, adam.m/, adam.v/.
"""
import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from schema.run_schema import ArchitectureSpec
from utils.errors import DatasetIOError, FormatError
from utils.tensor_core import Tensor

MAGIC = b"AKHW"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    version: int = FORMAT_VERSION
    params: Dict[str, Tensor]
    buffers: Dict[str, Tensor] = Field(default_factory=dict)
    adam_t: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adam_m: Dict[str, Tensor] = Field(default_factory=dict)
    adam_v: Dict[str, Tensor] = Field(default_factory=dict)
    epoch: int = 0
    class_names: List[str] = Field(default_factory=list)
    architecture: ArchitectureSpec = Field(default_factory=ArchitectureSpec)
    precision: str = "standard"


def _hash(payload: bytes) -> int:
    return struct.unpack("<Q", hashlib.blake2b(payload, digest_size=8).digest())[0]


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = {
        "adam": {"beta1": ckpt.adam_beta1, "beta2": ckpt.adam_beta2, "eps": ckpt.adam_eps, "t": ckpt.adam_t},
        "architecture": ckpt.architecture.model_dump(mode="json"),
        "class_names": ckpt.class_names,
        "epoch": ckpt.epoch,
        "precision": ckpt.precision,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")

    entries: List[Tuple[str, Tensor]] = []
    for prefix, group in (("param", ckpt.params), ("buffer", ckpt.buffers),
                          ("adam.m", ckpt.adam_m), ("adam.v", ckpt.adam_v)):
        entries.extend((f"{prefix}/{name}", value) for name, value in group.items())

    chunks = [MAGIC, struct.pack("<II", ckpt.version, len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(entries))]
    for name, value in entries:
        dtype = np.dtype(value.dtype).newbyteorder("=")
        if dtype not in _CODES:
            raise FormatError(f"Unsupported dtype {value.dtype} for entry '{name}'.")
        code = _CODES[dtype]
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<BI", code, value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype=_DTYPES[code]).tobytes())
    payload = b"".join(chunks)
    return payload + struct.pack("<Q", _hash(payload))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"Truncated checkpoint: needed {n} bytes", self.path, self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, path: str = "<memory>") -> Checkpoint:
    if len(data) < len(MAGIC) + 8 + 4 + 8:
        raise FormatError("Checkpoint too short", path, len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"Bad magic {data[:4]!r}", path, 0)
    payload, stored = data[:-8], struct.unpack("<Q", data[-8:])[0]
    if _hash(payload) != stored:
        raise FormatError("Checksum mismatch (truncated or corrupted file)", path, len(payload))

    r = _Reader(payload, path)
    r.take(4)
    version, meta_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}", path, 4)
    meta_offset = r.pos
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Bad metadata block: {e}", path, meta_offset)

    groups: Dict[str, Dict[str, Tensor]] = {"param": {}, "buffer": {}, "adam.m": {}, "adam.v": {}}
    (count,) = r.unpack("<I")
    for _ in range(count):
        entry_offset = r.pos
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BI")
        if code not in _DTYPES:
            raise FormatError(f"Unknown dtype code {code} for '{name}'", path, entry_offset)
        shape = r.unpack(f"<{rank}I") if rank else ()
        dtype = _DTYPES[code]
        raw = r.take(int(np.prod(shape, dtype=np.int64)) * dtype.itemsize)
        prefix, _, key = name.partition("/")
        if prefix not in groups:
            raise FormatError(f"Unknown entry prefix in '{name}'", path, entry_offset)
        groups[prefix][key] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if r.pos != len(payload):
        raise FormatError("Trailing bytes after last entry", path, r.pos)

    adam = meta.get("adam", {})
    return Checkpoint(
        version=version, params=groups["param"], buffers=groups["buffer"],
        adam_t=adam.get("t", 0), adam_beta1=adam.get("beta1", 0.9), adam_beta2=adam.get("beta2", 0.999),
        adam_eps=adam.get("eps", 1e-8), adam_m=groups["adam.m"], adam_v=groups["adam.v"],
        epoch=meta.get("epoch", 0), class_names=meta.get("class_names", []),
        architecture=ArchitectureSpec(**meta.get("architecture", {})),
        precision=meta.get("precision", "standard"),
    )


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    path = Path(path)
    data = encode_checkpoint(ckpt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as e:
        raise DatasetIOError(f"Cannot write checkpoint {path}: {e}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetIOError(f"Cannot read checkpoint {path}: {e}")
    return decode_checkpoint(data, str(path))
