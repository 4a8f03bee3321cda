"""Locate natural photographs shipped inside common scientific packages.

These give the scaled experiment a fixed, offline corpus. Only file paths are
resolved; nothing from the host packages is imported or executed.
"""

from __future__ import annotations

import importlib.util
from pathlib import Path

import numpy as np

from biq.imageio import read_image

# (package, path inside package)
TRAIN = [
    ("skimage", "data/astronaut.png"),
    ("skimage", "data/camera.png"),
    ("skimage", "data/coins.png"),
    ("skimage", "data/moon.png"),
    ("skimage", "data/motorcycle_left.png"),
    ("skimage", "data/motorcycle_right.png"),
    ("skimage", "data/brick.png"),
    ("skimage", "data/grass.png"),
    ("skimage", "data/gravel.png"),
    ("skimage", "data/ihc.png"),
]
# photographs among the training set, used for the natural model
NATURAL = TRAIN[:5]
HELD_OUT = [
    ("skimage", "data/coffee.png"),
    ("skimage", "data/rocket.jpg"),
    ("skimage", "data/chelsea.png"),
    ("sklearn", "datasets/images/china.jpg"),
    ("sklearn", "datasets/images/flower.jpg"),
    ("matplotlib", "mpl-data/sample_data/grace_hopper.jpg"),
]


def locate(package: str, relative: str) -> Path:
    spec = importlib.util.find_spec(package)
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError(f"package {package!r} is not installed")
    path = Path(list(spec.submodule_search_locations)[0]) / relative
    if not path.is_file():
        raise FileNotFoundError(path)
    return path


def image_id(relative: str) -> str:
    return Path(relative).stem


def load(entries) -> list[tuple[str, np.ndarray]]:
    return [(image_id(rel), read_image(locate(pkg, rel))) for pkg, rel in entries]


def available(entries=TRAIN + HELD_OUT) -> bool:
    try:
        for pkg, rel in entries:
            locate(pkg, rel)
    except FileNotFoundError:
        return False
    return True
