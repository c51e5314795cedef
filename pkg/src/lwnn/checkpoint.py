"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic b"LWNNCKPT"
    u32       format version
    u64       metadata length, then that many bytes of UTF-8 JSON
    u32       record count
    records   u32 name length, name (UTF-8), u32 ndim, ndim x u64 dims,
              prod(dims) x f64 payload
    u32       CRC-32 of every preceding byte

Metadata JSON is written with sorted keys and no whitespace so that
save -> load -> save reproduces the file byte for byte. A pretty-printed copy
of the metadata is written next to the checkpoint as ``<name>.json`` for
humans; loading never reads it.
"""

from __future__ import annotations

import io
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .layers import NetworkConfig, check_params, param_names
from .optim import AdamState

MAGIC = b"LWNNCKPT"
FORMAT_VERSION = 1

_PARAM = "param/"
_ADAM_M = "adam.m/"
_ADAM_V = "adam.v/"


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int  # completed epochs
    seed: int = 0
    run: int = 0
    history: list[dict] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "network": self.config.to_dict(),
            "epoch": self.epoch,
            "seed": self.seed,
            "run": self.run,
            "adam_t": self.adam.t,
            "history": self.history,
        }


def _arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = []
    for name in param_names(ckpt.config):
        out.append((_PARAM + name, ckpt.params[name]))
    for name in param_names(ckpt.config):
        out.append((_ADAM_M + name, ckpt.adam.m[name]))
        out.append((_ADAM_V + name, ckpt.adam.v[name]))
    return out


def dumps(ckpt: Checkpoint) -> bytes:
    try:
        check_params(ckpt.config, ckpt.params)
        check_params(ckpt.config, ckpt.adam.m)
        check_params(ckpt.config, ckpt.adam.v)
    except ConfigError as e:
        raise CheckpointError(f"refusing to write inconsistent checkpoint: {e}") from e
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta = json.dumps(ckpt.metadata(), sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(meta)))
    buf.write(meta)
    arrays = _arrays(ckpt)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode()
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, raw: bytes, origin: str):
        self.raw = raw
        self.pos = 0
        self.origin = origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"{self.origin}: corrupt length, need {n} bytes at offset {self.pos} "
                f"but file ends at {len(self.raw)}"
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(raw: bytes, origin: str = "<bytes>") -> Checkpoint:
    r = _Reader(raw, origin)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{origin}: not a checkpoint (bad magic)")
    version, meta_len = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{origin}: format version {version}, this build reads {FORMAT_VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{origin}: unreadable metadata: {e}") from e

    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode(errors="replace")
        (ndim,) = r.unpack("<I")
        if ndim > 8:
            raise CheckpointError(f"{origin}: record {name!r} claims {ndim} dimensions")
        shape = r.unpack(f"<{ndim}Q")
        size = math.prod(shape)
        payload = r.take(8 * size)
        if name in arrays:
            raise CheckpointError(f"{origin}: duplicate record {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    (crc,) = r.unpack("<I")
    if r.pos != len(raw):
        raise CheckpointError(f"{origin}: corrupt length, {len(raw) - r.pos} trailing bytes")
    if crc != zlib.crc32(raw[: r.pos - 4]):
        raise CheckpointError(f"{origin}: checksum mismatch")

    try:
        config = NetworkConfig.from_dict(meta["network"])
        names = param_names(config)
        expected = {p + n for n in names for p in (_PARAM, _ADAM_M, _ADAM_V)}
        unknown = sorted(set(arrays) - expected)
        if unknown:
            raise CheckpointError(f"{origin}: unknown parameter name(s) {unknown}")
        missing = sorted(expected - set(arrays))
        if missing:
            raise CheckpointError(f"{origin}: missing parameter(s) {missing}")
        adam = AdamState(
            m={n: arrays[_ADAM_M + n] for n in names},
            v={n: arrays[_ADAM_V + n] for n in names},
            t=int(meta["adam_t"]),
        )
        ckpt = Checkpoint(
            config=config,
            params={n: arrays[_PARAM + n] for n in names},
            adam=adam,
            epoch=int(meta["epoch"]),
            seed=int(meta["seed"]),
            run=int(meta["run"]),
            history=list(meta["history"]),
        )
    except (KeyError, TypeError, ConfigError) as e:
        raise CheckpointError(f"{origin}: inconsistent metadata: {e}") from e
    try:
        check_params(config, ckpt.params)
    except ConfigError as e:
        raise CheckpointError(f"{origin}: {e}") from e
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    raw = dumps(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(raw)
    tmp.replace(path)
    sidecar = ckpt.metadata()
    sidecar["arrays"] = {name: list(np.shape(a)) for name, a in _arrays(ckpt)}
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    return loads(raw, str(path))
