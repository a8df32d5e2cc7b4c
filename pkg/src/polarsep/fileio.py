"""PNG (8/16-bit) and PFM readers/writers. Channel order is RGB throughout."""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import cv2
import numpy as np

from .imagecore import as_image


class ImageIOError(OSError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def encode_pfm(img) -> bytes:
    img = as_image(img)
    h, w, c = img.shape
    tag = b"PF" if c == 3 else b"Pf"
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    # PFM stores rows bottom to top; negative scale means little endian
    body = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    return header + body


def write_pfm(path, img) -> None:
    atomic_write_bytes(path, encode_pfm(img))


_HEADER_TOKEN = re.compile(rb"\S+")


def decode_pfm(data: bytes, name: str = "<pfm>") -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = _HEADER_TOKEN.search(data, pos)
        if m is None:
            raise ImageIOError(f"{name}: truncated PFM header")
        tokens.append(m.group())
        pos = m.end()
    pos += 1  # single whitespace byte after the scale
    tag, w, h, scale = tokens
    if tag == b"PF":
        c = 3
    elif tag == b"Pf":
        c = 1
    else:
        raise ImageIOError(f"{name}: not a PFM file (tag {tag!r})")
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise ImageIOError(f"{name}: malformed PFM header") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * c
    if len(data) - pos < 4 * n:
        raise ImageIOError(f"{name}: truncated PFM payload")
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(h, w, c)
    return arr[::-1].astype(np.float64)


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc
    return decode_pfm(data, str(path))


# ---------------------------------------------------------------------------
# PNG and other LDR formats
# ---------------------------------------------------------------------------


def encode_png(img, bits: int = 8) -> bytes:
    if bits not in (8, 16):
        raise ValueError(f"PNG bit depth must be 8 or 16, got {bits}")
    img = as_image(img)
    levels = 2**bits - 1
    q = np.round(np.clip(img, 0.0, 1.0) * levels).astype(np.uint8 if bits == 8 else np.uint16)
    if q.shape[2] == 3:
        q = q[..., ::-1]
    ok, buf = cv2.imencode(".png", np.ascontiguousarray(q))
    if not ok:
        raise ImageIOError("PNG encoding failed")
    return buf.tobytes()


def write_png(path, img, bits: int = 8) -> None:
    atomic_write_bytes(path, encode_png(img, bits))


def read_image(path) -> np.ndarray:
    """Read PNG/JPEG/etc. (or PFM by extension) as float64 (H, W, C) in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"cannot read image {path}")
    if raw.ndim == 2:
        raw = raw[..., None]
    elif raw.shape[2] == 4:
        raw = raw[..., :3]
    if raw.shape[2] == 3:
        raw = raw[..., ::-1]
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    elif raw.dtype.kind == "f":
        scale = 1.0
    else:
        raise ImageIOError(f"{path}: unsupported sample type {raw.dtype}")
    return raw.astype(np.float64) / scale


def to_rgb(img: np.ndarray) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return np.repeat(img, 3, axis=2)
    return img
