"""Decoding to single-plane luma in [0, 1], PNG output, atomic writes."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

EXTENSIONS = {".png", ".pgm", ".ppm", ".pnm"}
LUMA = np.array([0.299, 0.587, 0.114])


def to_luma(pixels: np.ndarray, max_value: float) -> np.ndarray:
    x = np.asarray(pixels, dtype=np.float64) / max_value
    if x.ndim == 3:
        x = x[..., :3] @ LUMA if x.shape[2] >= 3 else x[..., 0]
    return np.clip(x, 0.0, 1.0)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read PNG (8/16-bit gray or colour) or binary PGM/PPM as float luma."""
    with Image.open(path) as im:
        if im.mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
        elif im.mode in ("1", "LA"):
            im = im.convert("L")
        if im.mode.startswith("I"):
            # 16-bit gray decodes into integer modes
            arr = np.asarray(im, dtype=np.float64)
            return to_luma(arr, 65535.0)
        arr = np.asarray(im)
    if arr.dtype == np.uint16:
        return to_luma(arr, 65535.0)
    return to_luma(arr, 255.0)


def write_png(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a [0, 1] luma plane as a 16-bit grayscale PNG, atomically."""
    image = np.asarray(image, dtype=np.float64)
    q = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        Image.fromarray(q).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def list_images(directory: str | os.PathLike) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in EXTENSIONS and p.is_file())


def load_folder(directory: str | os.PathLike, min_size: int = 1) -> list[tuple[str, np.ndarray]]:
    """Decode every supported image in a folder, skipping ones below ``min_size``."""
    images = []
    for p in list_images(directory):
        im = read_image(p)
        if min(im.shape) >= min_size:
            images.append((p.stem, im))
    return images
