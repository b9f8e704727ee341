"""Weights files, PNG images and CSV logs.

Weights layout (all integers little-endian)::

    b"ESDW" | u32 version=1 | u32 count
    count x ( u32 name_len | name utf-8 | u8 dtype (0=f32) | u8 ndim
              | u32 dims[ndim] | f32 values[prod(dims)] )
    u32 crc32 of every preceding byte

Every writer goes through a temporary file in the target directory and an
atomic rename, so a failed write never leaves a partial file behind.
"""

import contextlib
import csv
import os
import struct
import tempfile
import zlib

import numpy as np
from PIL import Image

from .errors import ContractError, FormatError
from .model import ModelConfig, ModelParams, param_spec

MAGIC = b"ESDW"
VERSION = 1
DTYPE_F32 = 0


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def encode_weights(params):
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_weights(blob):
    if len(blob) < 16:
        raise FormatError(f"weights file truncated ({len(blob)} bytes)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("weights file CRC mismatch (corrupt or truncated)")
    if body[:4] != MAGIC:
        raise FormatError(f"bad magic {body[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise FormatError(f"unsupported weights version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            dtype, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            if dtype != DTYPE_F32:
                raise FormatError(f"entry {name!r}: unsupported dtype tag {dtype}")
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(body):
                raise FormatError(f"entry {name!r}: payload shorter than dims {dims}")
            if name in out:
                raise FormatError(f"duplicate entry {name!r}")
            out[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise FormatError(f"weights file layout is malformed: {exc}") from None
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} trailing bytes after last entry")
    return out


def write_weights(params, path):
    with atomic_write(path) as fh:
        fh.write(encode_weights(params))


def read_weights(path):
    with open(path, "rb") as fh:
        return decode_weights(fh.read())


def save_weights(model, path):
    write_weights(model.params, path)


def infer_config(entries):
    """Guess the ModelConfig that produced a set of weight entries."""
    head = entries.get("head.conv.weight")
    if head is None or head.shape[0] == 0 or 48 % head.shape[0]:
        raise FormatError("cannot determine model width: head.conv.weight missing or odd-shaped")
    if "enc1.sam2.mlp.fc1.weight" in entries:
        variant = "large"
    elif "enc1.sam1.branch.proj.weight" in entries:
        variant = "weight_shared"
    else:
        variant = "standard"
    return ModelConfig(variant=variant, width_div=48 // head.shape[0])


def load_weights(path, config=None):
    """Read a weights file and check it against ``config`` entry by entry."""
    entries = read_weights(path)
    config = config or infer_config(entries)
    expected = dict(param_spec(config))
    problems = []
    for name in expected:
        if name not in entries:
            problems.append(f"missing entry {name}")
        elif tuple(entries[name].shape) != expected[name]:
            problems.append(f"shape mismatch for {name}: file {tuple(entries[name].shape)}, "
                            f"expected {expected[name]}")
    problems += [f"unexpected entry {name}" for name in entries if name not in expected]
    if problems:
        more = f" (+{len(problems) - 3} more)" if len(problems) > 3 else ""
        raise ContractError("; ".join(problems[:3]) + more)
    return ModelParams(config, {name: entries[name] for name in expected})


# -- images ------------------------------------------------------------------

def load_png(path):
    """8-bit RGB/RGBA PNG -> float32 3 x H x W in [0, 1] (alpha dropped)."""
    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA"):
            raise FormatError(f"{path}: unsupported PNG mode {im.mode!r}; need 8-bit RGB or RGBA")
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)).astype(np.float32) / np.float32(255)


def quantize(img):
    """Round-half-up to 8 bits."""
    img = np.asarray(img, dtype=np.float64)
    return np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)


def save_png(img, path):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"save_png expects 3 x H x W, got {img.shape}")
    q = quantize(img).transpose(1, 2, 0)
    with atomic_write(path) as fh:
        Image.fromarray(np.ascontiguousarray(q), mode="RGB").save(fh, format="PNG")


# -- csv ---------------------------------------------------------------------

def write_csv(rows, path, fields):
    with atomic_write(path, "w") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in row.items()})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
