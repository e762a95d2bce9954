"""File formats: the ``.tns`` tensor container, binary PGM/PPM, and parameter bundles.

``.tns`` layout: ASCII magic ``TNS1``, little-endian u32 rank, ``rank`` u32
extents, then the row-major float64 payload (little-endian).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import as_tensor

TNS_MAGIC = b"TNS1"


def write_tns(path, x):
    x = as_tensor(x)
    header = TNS_MAGIC + struct.pack(f"<I{x.ndim}I", x.ndim, *x.shape)
    Path(path).write_bytes(header + x.astype("<f8").tobytes(order="C"))


def read_tns(path):
    raw = Path(path).read_bytes()
    if raw[:4] != TNS_MAGIC:
        raise ValueError(f"{path}: not a TNS1 file")
    (rank,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape)) if rank else 0
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match shape {shape}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return as_tensor(data.reshape(shape).astype(np.float64))


def _read_token(raw, pos):
    while True:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        break
    start = pos
    while pos < len(raw) and not raw[pos:pos + 1].isspace():
        pos += 1
    return raw[start:pos], pos


def read_pnm_raw(path):
    """Read a binary PGM (P5) or PPM (P6) file as uint8 ``(C, H, W)``."""
    raw = Path(path).read_bytes()
    magic, pos = _read_token(raw, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only binary P5/P6 images are supported")
    width, pos = _read_token(raw, pos)
    height, pos = _read_token(raw, pos)
    maxval, pos = _read_token(raw, pos)
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit images are not supported")
    pos += 1  # single whitespace byte before the raster
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos)
    return pixels.reshape(height, width, channels).transpose(2, 0, 1).copy(), maxval


def read_image(path):
    """Read PGM/PPM into a float feature map in [0, 1]."""
    pixels, maxval = read_pnm_raw(path)
    return pixels.astype(np.float64) / maxval


def write_image(path, x):
    """Write a 1- or 3-channel map with values in [0, 1] as PGM or PPM."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] not in (1, 3):
        raise ValueError(f"can only write 1 or 3 channel images, got {x.shape[0]}")
    pixels = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    _write_pnm(path, pixels)


def _write_pnm(path, pixels):
    c, h, w = pixels.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.transpose(1, 2, 0).tobytes())


def read_labels(path):
    """Read a PGM label map; the pixel value is the class index."""
    pixels, _ = read_pnm_raw(path)
    if pixels.shape[0] != 1:
        raise ValueError(f"{path}: label maps must be single-channel PGM")
    return pixels[0].astype(np.int64)


def write_labels(path, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label values must fit in 8 bits")
    _write_pnm(path, labels.astype(np.uint8)[None])


def read_any(path):
    """Load a ``.tns`` tensor or a PGM/PPM image as a feature map."""
    path = Path(path)
    if path.suffix == ".tns":
        x = read_tns(path)
        if x.ndim == 2:
            x = x[None]
        return x
    return read_image(path)


def save_params(path, blocks):
    """Write named arrays to ``<path>.tns`` (concatenated, flattened) plus a JSON sidecar.

    The sidecar lists each block's name, shape and offset into the flat payload,
    so the bundle round-trips through a single ``.tns`` file.
    """
    path = Path(path)
    entries, flat, offset = [], [], 0
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        flat.append(arr.ravel())
        offset += arr.size
    write_tns(path.with_suffix(".tns"), np.concatenate(flat))
    sidecar = {"format": "TNS1", "blocks": entries}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_params(path):
    path = Path(path)
    flat = read_tns(path.with_suffix(".tns"))
    sidecar = json.loads(path.with_suffix(".json").read_text())
    blocks = {}
    for entry in sidecar["blocks"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        blocks[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(shape).copy()
    return blocks
