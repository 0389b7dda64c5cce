"""Versioned binary serialization of model state.

Layout (all integers little-endian):

    magic            4 bytes  b"MPXM"
    version          u32
    config length    u32
    config           UTF-8 JSON: model config fields + init seed
    entry count      u32
    per entry:
        name length  u16, then UTF-8 name (dotted parameter/buffer path)
        kind         u8   0 = parameter, 1 = buffer (running statistics)
        trainable    u8
        dtype        u8   0 = float32, 1 = float64
        ndim         u8, then ndim x u32 dims
        payload      raw little-endian values

Loading rebuilds the model from the config echo and restores every tensor
byte-for-byte, so a save/load round trip reproduces forward outputs exactly.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataError
from .model import ModelConfig, MpoxMamba, build_model

MAGIC = b"MPXM"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _config_payload(model: MpoxMamba) -> bytes:
    doc = {"config": dataclasses.asdict(model.cfg), "seed": getattr(model, "init_seed", 0)}
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def save_checkpoint(model: MpoxMamba, path: Union[str, Path]) -> None:
    entries = []
    for name, param in model.named_parameters():
        entries.append((name, 0, int(param.trainable), param.data))
    for name, buf in model.named_buffers():
        entries.append((name, 1, 0, buf))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        payload = _config_payload(model)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(entries)))
        for name, kind, trainable, data in entries:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            code = _DTYPE_CODES[np.dtype(data.dtype)]
            fh.write(struct.pack("<BBB", kind, trainable, code))
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(data).astype(_DTYPES[code], copy=False).tobytes())


def _read(fh, size: int, what: str) -> bytes:
    chunk = fh.read(size)
    if len(chunk) != size:
        raise DataError(f"checkpoint truncated while reading {what}")
    return chunk


def load_checkpoint(path: Union[str, Path]) -> MpoxMamba:
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise DataError(f"{path}: not a model checkpoint (bad magic bytes)")
        (version,) = struct.unpack("<I", _read(fh, 4, "version"))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read(fh, 4, "config length"))
        try:
            doc = json.loads(_read(fh, clen, "config").decode("utf-8"))
            cfg_fields = dict(doc["config"])
            for key in ("input_hw", "stage_widths", "downsample_widths", "stage_depths"):
                cfg_fields[key] = tuple(cfg_fields[key])
            cfg = ModelConfig(**cfg_fields)
            seed = int(doc["seed"])
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: malformed checkpoint config: {exc}") from exc

        model = build_model(cfg, seed=seed)
        params = dict(model.named_parameters())
        buffers = dict(model.named_buffers())
        restored = set()

        (count,) = struct.unpack("<I", _read(fh, 4, "entry count"))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, nlen, "name").decode("utf-8")
            kind, trainable, code = struct.unpack("<BBB", _read(fh, 3, "entry header"))
            (ndim,) = struct.unpack("<B", _read(fh, 1, "ndim"))
            shape = tuple(struct.unpack("<I", _read(fh, 4, "dim"))[0] for _ in range(ndim))
            if code not in _DTYPES:
                raise DataError(f"{path}: unknown dtype code {code} for {name}")
            dtype = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
            raw = _read(fh, nbytes, f"data of {name}")
            values = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

            target = params.get(name) if kind == 0 else None
            if kind == 0:
                if target is None:
                    raise DataError(f"{path}: unknown parameter {name!r}")
                if target.shape != shape:
                    raise DataError(f"{path}: shape mismatch for {name}: {shape} vs {target.shape}")
                target.data = np.ascontiguousarray(values.astype(target.dtype, copy=False))
                target.trainable = bool(trainable)
            else:
                buf = buffers.get(name)
                if buf is None:
                    raise DataError(f"{path}: unknown buffer {name!r}")
                if buf.shape != shape:
                    raise DataError(f"{path}: shape mismatch for {name}: {shape} vs {buf.shape}")
                buf[...] = values
            restored.add(name)

        expected = set(params) | set(buffers)
        if restored != expected:
            missing = sorted(expected - restored)
            raise DataError(f"{path}: checkpoint incomplete, missing {missing[:5]}")
    return model
