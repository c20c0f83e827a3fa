"""Binary netpbm I/O: PPM (P6) colour images and PGM (P5) class maps."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def _atomic_save(image: Image.Image, path, fmt: str) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    image.save(tmp, format=fmt)
    os.replace(tmp, path)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    _atomic_save(Image.fromarray(img, mode="RGB"), path, "PPM")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "RGB":
            raise ValueError(f"{path}: not a binary 8-bit PPM image")
        return np.array(im, dtype=np.uint8)


def write_pgm(path, class_map: np.ndarray) -> None:
    class_map = np.asarray(class_map, dtype=np.uint8)
    if class_map.ndim != 2:
        raise ValueError(f"expected HxW map, got {class_map.shape}")
    _atomic_save(Image.fromarray(class_map, mode="L"), path, "PPM")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path}: not a binary 8-bit PGM image")
        return np.array(im, dtype=np.uint8)
