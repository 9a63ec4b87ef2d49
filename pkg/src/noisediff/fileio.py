"""File formats: NDTN tensors, PGM/PPM images, mixture specs and checkpoints.

NDTN layout (all integers little-endian)::

    magic   4 bytes  b"NDTN"
    version u32      1
    ndims   u32
    dims    ndims x u64
    payload prod(dims) x f64, row-major

A checkpoint is a concatenation of NDTN records: first a 1-D metadata record
``[format, baseline, data_var, *data_shape]``, then ``data_mean`` and the layers
in ``LAYER_ORDER`` (W1, b1, W2, b2, W3, b3).

Every writer goes through a temporary file in the target directory and an
atomic rename, so a failed run never leaves a partial file behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .mixture import GaussianMixtureModel
from .mlp import LAYER_ORDER, ScoreNetParams

MAGIC = b"NDTN"
VERSION = 1
CHECKPOINT_FORMAT = 1.0


class TensorFileError(ValueError):
    pass


class BadMagicError(TensorFileError):
    pass


class UnsupportedVersionError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def tensor_to_bytes(t) -> bytes:
    arr = np.asarray(t, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes(order="C")


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one record starting at ``offset``; returns the tensor and the end offset."""
    if len(buf) - offset < 12:
        if buf[offset:offset + 4] != MAGIC[: len(buf) - offset]:
            raise BadMagicError("bad magic")
        raise TruncatedPayloadError("truncated header")
    if buf[offset:offset + 4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[offset:offset + 4]!r}")
    version, ndims = struct.unpack_from("<II", buf, offset + 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    pos = offset + 12
    if len(buf) < pos + 8 * ndims:
        raise TruncatedPayloadError("truncated header")
    dims = struct.unpack_from(f"<{ndims}Q", buf, pos)
    pos += 8 * ndims
    count = int(np.prod(dims, dtype=np.int64)) if ndims else 1
    end = pos + 8 * count
    if len(buf) < end:
        raise TruncatedPayloadError(f"truncated payload: expected {8 * count} bytes, found {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
    return arr, end


def write_tensor(path, t) -> None:
    atomic_write(path, tensor_to_bytes(t))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TensorFileError(f"{len(buf) - end} trailing bytes after tensor payload")
    return arr


def image_bytes(t) -> bytes:
    """Binary PGM (H, W) or PPM (H, W, 3), maxval 255, round half up."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"images must have shape (H, W) or (H, W, 3), got {arr.shape}")
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + q.tobytes()


def write_image(path, t) -> None:
    atomic_write(path, image_bytes(t))


def read_image(path) -> np.ndarray:
    """Read an 8-bit binary PGM/PPM into floats in [0, 1]."""
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    pos += 1
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise ValueError(f"only 8-bit P5/P6 images are supported, got {magic!r} maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * channels, offset=pos)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return data.reshape(shape).astype(np.float64) / 255.0


def load_array(path) -> np.ndarray:
    """NDTN tensor or PGM/PPM image, by extension."""
    if Path(path).suffix.lower() in (".pgm", ".ppm"):
        return read_image(path)
    return read_tensor(path)


def write_mixture(path, model: GaussianMixtureModel) -> None:
    """JSON spec plus one ``<stem>_center_<k>.ndtn`` file per component, next to it."""
    path = Path(path)
    refs = []
    for k, c in enumerate(model.centers):
        name = f"{path.stem}_center_{k}.ndtn"
        write_tensor(path.parent / name, c)
        refs.append(name)
    spec = {"weights": model.weights.tolist(), "delta": model.delta, "centers": refs}
    atomic_write(path, (json.dumps(spec, indent=2) + "\n").encode())


def read_mixture(path) -> GaussianMixtureModel:
    path = Path(path)
    spec = json.loads(path.read_text())
    for key in ("weights", "centers", "delta"):
        if key not in spec:
            raise ValueError(f"mixture spec {path} is missing field '{key}'")
    centers = [read_tensor(path.parent / ref) for ref in spec["centers"]]
    return GaussianMixtureModel(np.asarray(spec["weights"], dtype=np.float64), np.stack(centers),
                                float(spec["delta"]))


def write_checkpoint(path, params: ScoreNetParams) -> None:
    meta = np.array([CHECKPOINT_FORMAT, float(params.baseline), params.data_var, *params.data_shape])
    parts = [tensor_to_bytes(meta), tensor_to_bytes(params.data_mean)]
    parts += [tensor_to_bytes(a) for a in params.arrays()]
    atomic_write(path, b"".join(parts))


def read_checkpoint(path) -> ScoreNetParams:
    buf = Path(path).read_bytes()
    records, pos = [], 0
    while pos < len(buf):
        arr, pos = tensor_from_bytes(buf, pos)
        records.append(arr)
    if len(records) != 2 + len(LAYER_ORDER):
        raise TensorFileError(f"checkpoint holds {len(records)} records, expected {2 + len(LAYER_ORDER)}")
    meta = records[0]
    if meta.ndim != 1 or len(meta) < 4 or meta[0] != CHECKPOINT_FORMAT:
        raise TensorFileError("unrecognised checkpoint metadata")
    shape = tuple(int(v) for v in meta[3:])
    return ScoreNetParams(*records[2:], data_mean=records[1], data_var=float(meta[2]),
                          data_shape=shape, baseline=bool(meta[1]))
