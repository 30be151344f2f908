"""Binary model checkpoints.

Layout: magic ``THM1``, one format-version byte, a UTF-8 ``key=value``
config block terminated by a blank line, then one record per parameter in
model construction order: name length (uint32 LE), name bytes, rank
(uint32 LE), each dimension (uint32 LE), raw little-endian float32 payload.
Saving and loading a float32 model is bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ModelConfig, Seq2SeqModel, build_model
from .rng import Rng

MAGIC = b"THM1"
FORMAT_VERSION = 1

_CONFIG_FIELDS = (
    ("arch", str),
    ("d_model", int),
    ("n_heads", int),
    ("n_blocks", int),
    ("d_ff", int),
    ("vocab_size", int),
    ("dropout_p", float),
    ("swap_prob", float),
    ("max_len", int),
    ("label_smoothing", float),
)


def save_checkpoint(path, config: ModelConfig, step: int, params: dict[str, np.ndarray]):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([FORMAT_VERSION]))
        lines = [f"{key}={getattr(config, key)}" for key, _ in _CONFIG_FIELDS]
        lines.append(f"step={step}")
        fh.write(("\n".join(lines) + "\n\n").encode("utf-8"))
        for name, value in params.items():
            arr = np.ascontiguousarray(np.asarray(value), dtype="<f4")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, int, dict[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    if blob[4] != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format version {blob[4]}")
    end = blob.index(b"\n\n", 5)
    fields: dict[str, str] = {}
    for line in blob[5:end].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        fields[key] = value
    step = int(fields.pop("step"))
    kwargs = {key: conv(fields[key]) for key, conv in _CONFIG_FIELDS}
    config = ModelConfig(**kwargs)

    params: dict[str, np.ndarray] = {}
    pos = end + 2
    while pos < len(blob):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        params[name] = arr.copy()
    return config, step, params


def save_model(path, model: Seq2SeqModel, step: int = 0):
    save_checkpoint(path, model.config, step, {n: p.data for n, p in model.params.items()})


def model_from_checkpoint(path, dtype=np.float32) -> tuple[Seq2SeqModel, int]:
    """Rebuild a model and overwrite its parameters with the stored values."""
    config, step, params = load_checkpoint(path)
    model = build_model(config, Rng(0), dtype=dtype)
    missing = set(model.params) ^ set(params)
    if missing:
        raise DataError(f"checkpoint parameters do not match the model: {sorted(missing)[:5]}")
    for name, p in model.params.items():
        stored = params[name]
        if stored.shape != p.data.shape:
            raise DataError(
                f"checkpoint shape mismatch for {name}: {stored.shape} vs {p.data.shape}"
            )
        p.data = stored.astype(dtype)
    return model, step
