"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    b"SEGTRON\\0"            magic
    u32                      format version
    u64                      header length, then that many bytes of UTF-8 JSON
    u32                      tensor count
    per tensor:
        u16 name length, name (UTF-8)
        u8  ndim, ndim x u64 dims
        prod(dims) x float64 (row-major)

The header carries the encoder config, vocabulary, head/mode/strategy and
optimizer step; tensors are named ``encoder.*``, ``crf.transitions``,
``lstm.*`` and, when optimizer state is saved, ``adam.m.*`` / ``adam.v.*``.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from typing import Optional

import numpy as np

from .encoder import EncoderConfig, param_shapes
from .feature_head import CombinationStrategy, bilstm_shapes, lstm_hidden_size
from .model import Segmenter, TrainMode
from .vocab import build_vocabulary

MAGIC = b"SEGTRON\0"
VERSION = 1
TRANSITIONS = "crf.transitions"


class CheckpointError(ValueError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


class DimensionMismatch(CheckpointError):
    pass


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedCheckpoint(f"checkpoint truncated: wanted {n} bytes, got {len(data)}")
    return data


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, nlen).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    dims = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(dims)) if ndim else 1
    arr = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(dims)
    return name, arr.astype(np.float64)


def write_container(fh, header: dict, tensors: dict[str, np.ndarray]) -> None:
    head = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<IQ", VERSION, len(head)))
    fh.write(head)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_tensor(fh, name, arr)


def read_container(fh) -> tuple[dict, dict[str, np.ndarray]]:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        if len(magic) < len(MAGIC) and MAGIC.startswith(magic):
            raise TruncatedCheckpoint("checkpoint truncated inside the magic number")
        raise CheckpointError("not a segtron checkpoint")
    version, hlen = struct.unpack("<IQ", _read_exact(fh, 12))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors = {}
    for _ in range(count):
        name, arr = _read_tensor(fh)
        tensors[name] = arr
    if fh.read(1):
        raise CheckpointError("trailing bytes after last tensor")
    return header, tensors


def model_header(model: Segmenter) -> dict:
    opt = model.optimizer
    return {
        "format": "segtron-checkpoint",
        "config": model.config.to_dict(),
        "vocab": list(model.vocab.entries),
        "head": model.head,
        "mode": model.mode.value,
        "strategy": None if model.strategy is None else model.strategy.value,
        "lstm_hidden": None if model.lstm is None else lstm_hidden_size(model.lstm),
        "max_len": model.max_len,
        "lowercase": model.lowercase,
        "epochs_done": model.epochs_done,
        "adam_step": None if opt is None else opt.step,
    }


def model_tensors(model: Segmenter, include_optimizer: bool = True) -> dict[str, np.ndarray]:
    tensors = dict(model.all_tensors())
    opt = model.optimizer
    if include_optimizer and opt is not None:
        for k in sorted(opt.m):
            tensors["adam.m." + k] = opt.m[k]
            tensors["adam.v." + k] = opt.v[k]
    return tensors


def to_bytes(model: Segmenter, include_optimizer: bool = True) -> bytes:
    buf = io.BytesIO()
    write_container(buf, model_header(model), model_tensors(model, include_optimizer))
    return buf.getvalue()


def save_checkpoint(model: Segmenter, path: str | os.PathLike,
                    include_optimizer: bool = True) -> None:
    data = to_bytes(model, include_optimizer)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _expect(tensors, name, shape):
    if name not in tensors:
        raise CheckpointError(f"checkpoint lacks tensor {name}")
    if tuple(tensors[name].shape) != tuple(shape):
        raise DimensionMismatch(f"{name}: shape {tensors[name].shape} does not match "
                                f"header-derived {tuple(shape)}")
    return tensors[name]


def from_parts(header: dict, tensors: dict[str, np.ndarray],
               expected: Optional[EncoderConfig] = None) -> Segmenter:
    from .training import AdamState

    try:
        config = EncoderConfig(**header["config"])
    except (TypeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"bad encoder config in header: {exc}") from None
    if expected is not None and expected != config:
        diffs = [k for k, v in expected.to_dict().items() if config.to_dict()[k] != v]
        raise DimensionMismatch(f"checkpoint config differs from expected in: {', '.join(diffs)}")
    vocab = build_vocabulary(header["vocab"])
    if len(vocab) != config.vocab_size:
        raise DimensionMismatch(f"vocabulary has {len(vocab)} entries, config says "
                                f"{config.vocab_size}")
    encoder = {k: _expect(tensors, "encoder." + k, s) for k, s in param_shapes(config).items()}
    transitions = _expect(tensors, TRANSITIONS, (6, 6))
    mode = TrainMode(header["mode"])
    strategy = header.get("strategy")
    strategy = None if strategy is None else CombinationStrategy(strategy)
    lstm = None
    if header.get("lstm_hidden") is not None:
        width = (4 if strategy is CombinationStrategy.ConcatLastFour else 1) * config.hidden
        shapes = bilstm_shapes(width, header["lstm_hidden"])
        lstm = {k: _expect(tensors, "lstm." + k, s) for k, s in shapes.items()}
    model = Segmenter(vocab, config, encoder, header["head"], transitions, mode, strategy, lstm,
                      max_len=header.get("max_len", config.max_positions),
                      lowercase=header.get("lowercase", False),
                      epochs_done=header.get("epochs_done", 0))
    if header.get("adam_step") is not None:
        state = AdamState(step=int(header["adam_step"]))
        for name, arr in tensors.items():
            if name.startswith("adam.m."):
                key = name[len("adam.m."):]
                state.m[key] = arr
                state.v[key] = _expect(tensors, "adam.v." + key, arr.shape)
        model.optimizer = state
    return model


def load_checkpoint(path: str | os.PathLike, expected: Optional[EncoderConfig] = None) -> Segmenter:
    """Read a checkpoint; ``expected`` rejects files built for another config."""
    with open(path, "rb") as fh:
        header, tensors = read_container(fh)
    return from_parts(header, tensors, expected)


def from_bytes(data: bytes, expected: Optional[EncoderConfig] = None) -> Segmenter:
    header, tensors = read_container(io.BytesIO(data))
    return from_parts(header, tensors, expected)


def params_digest(params: dict[str, np.ndarray]) -> str:
    """SHA-256 over tensor names and float64 bytes, in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()
