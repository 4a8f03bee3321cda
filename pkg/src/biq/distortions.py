"""Distortion families and the benchmark corpus generator.

Three families at severity levels 1..5 (level 0 is the untouched image):
Gaussian blur, additive white Gaussian noise, and a compression proxy built
from 8x8 block-DCT quantization. The proxy stands in for a wavelet codec and
produces the blocking and ringing a real codec would.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FAMILIES = ("blur", "awgn", "compression")
PRISTINE = "pristine"
LEVELS = range(1, 6)
BLOCK = 8

MANIFEST_FIELDS = ["image_id", "family", "level", "path", "score"]


@dataclass(frozen=True)
class Schedule:
    """Per-level severity constants."""

    blur_sigma: float = 0.5
    noise_sigma: float = 0.02
    quant_step: float = 0.03

    def describe(self) -> str:
        return (
            f"blur sigma={self.blur_sigma}*level; awgn sigma={self.noise_sigma}*level; "
            f"compression=8x8 block-DCT quantization proxy (not JPEG-2000), "
            f"AC step={self.quant_step}*level, DC step=AC/4"
        )


def _check_level(level: int) -> None:
    if level not in range(0, 6):
        raise ValueError(f"level must be in 0..5, got {level}")


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _filter_axis(image: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(image, pad, mode="edge")
    out = np.zeros_like(image)
    n = image.shape[axis]
    for i, w in enumerate(kernel):
        out += w * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur(image: np.ndarray, level: int, sigma_per_level: float = 0.5) -> np.ndarray:
    _check_level(level)
    image = np.asarray(image, dtype=np.float64)
    if level == 0:
        return image.copy()
    kernel = gaussian_kernel(sigma_per_level * level)
    out = _filter_axis(_filter_axis(image, kernel, 0), kernel, 1)
    return np.clip(out, 0.0, 1.0)


def awgn(image: np.ndarray, level: int, seed: int = 0, sigma_per_level: float = 0.02) -> np.ndarray:
    _check_level(level)
    image = np.asarray(image, dtype=np.float64)
    if level == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(image.shape) * (sigma_per_level * level)
    return np.clip(image + noise, 0.0, 1.0)


def dct_matrix(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II matrix; rows are basis vectors."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


def _blocks(image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = image.shape
    ph, pw = -h % BLOCK, -w % BLOCK
    padded = np.pad(image, ((0, ph), (0, pw)), mode="edge")
    hb, wb = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    return padded.reshape(hb, BLOCK, wb, BLOCK).transpose(0, 2, 1, 3), (h, w)


def _unblocks(blocks: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    hb, wb = blocks.shape[:2]
    full = blocks.transpose(0, 2, 1, 3).reshape(hb * BLOCK, wb * BLOCK)
    return full[: shape[0], : shape[1]]


def block_dct(image: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    d = dct_matrix()
    blocks, shape = _blocks(np.asarray(image, dtype=np.float64))
    return d @ blocks @ d.T, shape


def block_idct(coeffs: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    d = dct_matrix()
    return _unblocks(d.T @ coeffs @ d, shape)


def compression_artifacts(image: np.ndarray, level: int, step_per_level: float = 0.03) -> np.ndarray:
    _check_level(level)
    image = np.asarray(image, dtype=np.float64)
    if level == 0:
        return image.copy()
    coeffs, shape = block_dct(image)
    step = np.full((BLOCK, BLOCK), step_per_level * level)
    step[0, 0] /= 4.0
    quantized = np.round(coeffs / step) * step
    return np.clip(block_idct(quantized, shape), 0.0, 1.0)


def distort(image: np.ndarray, family: str, level: int, seed: int = 0, schedule: Schedule = Schedule()) -> np.ndarray:
    if family == "blur":
        return gaussian_blur(image, level, schedule.blur_sigma)
    if family == "awgn":
        return awgn(image, level, seed, schedule.noise_sigma)
    if family == "compression":
        return compression_artifacts(image, level, schedule.quant_step)
    if family == PRISTINE and level == 0:
        return np.asarray(image, dtype=np.float64).copy()
    raise ValueError(f"unknown distortion family {family!r}")


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestRow:
    image_id: str
    family: str
    level: int
    path: str
    score: float | None = None


@dataclass
class Manifest:
    rows: list[ManifestRow] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def write(self, path: str | os.PathLike) -> None:
        from biq.imageio import atomic_write_text

        lines = [f"# {c}\n" for c in self.comments]
        rows = [",".join(MANIFEST_FIELDS) + "\n"]
        for r in self.rows:
            score = "" if r.score is None else repr(float(r.score))
            rows.append(f"{r.image_id},{r.family},{r.level},{r.path},{score}\n")
        atomic_write_text(path, "".join(lines + rows))

    @classmethod
    def read(cls, path: str | os.PathLike) -> "Manifest":
        comments, body = [], []
        with open(path, newline="") as fh:
            for line in fh:
                if line.startswith("#"):
                    comments.append(line[1:].strip())
                elif line.strip():
                    body.append(line)
        reader = csv.DictReader(body)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
        rows = [
            ManifestRow(
                r["image_id"], r["family"], int(r["level"]), r["path"],
                float(r["score"]) if r["score"] not in (None, "") else None,
            )
            for r in reader
        ]  # fmt: skip
        return cls(rows, comments)

    def resolve(self, row: ManifestRow, base: str | os.PathLike) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else Path(base) / p


def generate_benchmark(
    images: Sequence[tuple[str, np.ndarray]],
    output_dir: str | os.PathLike,
    seed: int = 0,
    schedule: Schedule = Schedule(),
) -> Manifest:
    """Write the pristine copy and 15 distorted variants of every image.

    File names are ``<image_id>_<family>_<level>.png`` and manifest paths are
    relative to ``output_dir``.
    """
    from biq.imageio import write_png

    if not images:
        raise ValueError("no images to distort")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out}: output directory is not writable")
    manifest = Manifest(comments=[f"distortions: {schedule.describe()}", f"seed={seed}"])
    for index, (image_id, image) in enumerate(images):
        image_seed = seed ^ index
        variants = [(PRISTINE, 0)] + [(fam, lvl) for fam in FAMILIES for lvl in LEVELS]
        for family, level in variants:
            name = f"{image_id}_{family}_{level}.png"
            write_png(out / name, distort(image, family, level, image_seed, schedule))
            manifest.rows.append(ManifestRow(image_id, family, level, name))
    return manifest
