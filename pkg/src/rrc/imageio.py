"""Grayscale image files: binary PGM (P5, maxval 255) and 8-bit PNG."""

from __future__ import annotations

import io
import os
import re

import numpy as np


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)(?:\s+|#[^\n]*\n)+?(\d+)\s")


def _read_pgm(raw: bytes, path) -> np.ndarray:
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise ImageFormatError(f"{path}: malformed PGM header")
    cols, rows, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PGM maxval {maxval} (only 255)")
    if rows < 1 or cols < 1:
        raise ImageFormatError(f"{path}: empty PGM ({cols}x{rows})")
    body = raw[m.end():]
    if len(body) < rows * cols:
        raise ImageFormatError(
            f"{path}: truncated PGM, expected {rows * cols} bytes of pixels, found {len(body)}"
        )
    return np.frombuffer(body[: rows * cols], dtype=np.uint8).reshape(rows, cols).astype(float)


def _read_png(raw: bytes, path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            if im.mode not in ("L", "P") or (im.mode == "P" and im.palette.mode != "L"):
                raise ImageFormatError(
                    f"{path}: PNG mode {im.mode!r} is not 8-bit grayscale"
                )
            return np.asarray(im, dtype=np.uint8).astype(float)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG ({exc})") from exc


def load_image(path) -> np.ndarray:
    """Read a grayscale PGM or PNG as a float array on the 0-255 scale."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw.startswith(b"P5"):
        return _read_pgm(raw, path)
    if raw.startswith(b"\x89PNG\r\n\x1a\n"):
        return _read_png(raw, path)
    if raw[:2] in (b"P2", b"P3", b"P6"):
        raise ImageFormatError(f"{path}: only binary grayscale PGM (P5) is supported")
    raise ImageFormatError(f"{path}: unrecognised image format")


def to_uint8(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def encode_image(img, fmt: str) -> bytes:
    data = to_uint8(img)
    if fmt == "pgm":
        rows, cols = data.shape
        return b"P5\n%d %d\n255\n" % (cols, rows) + data.tobytes()
    if fmt == "png":
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(data, mode="L").save(buf, format="PNG")
        return buf.getvalue()
    raise ValueError(f"unsupported output format {fmt!r}")


def format_for(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".pgm", ".pnm"):
        return "pgm"
    if ext == ".png":
        return "png"
    raise ValueError(f"cannot infer image format from extension of {path!r} (use .pgm or .png)")


def save_image(img, path) -> None:
    """Round, clamp to [0, 255] and write as PGM or PNG by file extension."""
    payload = encode_image(img, format_for(path))
    with open(path, "wb") as fh:
        fh.write(payload)
