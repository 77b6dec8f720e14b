"""Image ingestion: decode, centre-crop, bilinear resize, normalise to [0, 1]."""

from __future__ import annotations

import logging
import queue
import threading
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..noise import resize_bilinear

log = logging.getLogger(__name__)

EXTENSIONS = (".png", ".ppm", ".pgm", ".pnm", ".jpg", ".jpeg", ".bmp")


class DatasetError(ValueError):
    pass


def prepare(pixels: np.ndarray, size: int) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, size, size) float32 in [0, 1]."""
    a = np.asarray(pixels, dtype=np.float64)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    a = a[:, :, :3]
    H, W = a.shape[:2]
    s = min(H, W)
    top, left = (H - s) // 2, (W - s) // 2
    a = a[top:top + s, left:left + s].transpose(2, 0, 1) / 255.0
    if s != size:
        a = resize_bilinear(a, size, size)
    return np.clip(a, 0.0, 1.0).astype(np.float32)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def list_images(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in EXTENSIONS)
    if not files:
        raise DatasetError(f"no images in {directory}")
    return files


def load_dataset(directory, size: int = 128, seed: Optional[int] = None) -> Iterator[np.ndarray]:
    """Yield prepared images; order is sorted, or a seeded shuffle when ``seed`` is given.

    Unreadable files are skipped with a warning.
    """
    files = list_images(directory)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(files))
        files = [files[i] for i in order]
    for path in files:
        try:
            pixels = read_image(path)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        yield prepare(pixels, size)


def load_array(directory, size: int = 128, seed: Optional[int] = None) -> np.ndarray:
    images = list(load_dataset(directory, size, seed))
    if not images:
        raise DatasetError(f"no readable images in {directory}")
    return np.stack(images)


def prefetch(batches: Iterator, capacity: int = 4) -> Iterator:
    """Run ``batches`` on a background thread behind a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=capacity)
    done = object()

    def worker():
        try:
            for item in batches:
                q.put(item)
        except BaseException as exc:  # re-raised in the consumer
            q.put(exc)
        q.put(done)

    threading.Thread(target=worker, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item


def save_png(path, chw: np.ndarray) -> None:
    """Write a (3, H, W) image (uint8, or floats in [0, 1]) as 8-bit PNG."""
    from ..metrics import to_uint8
    Image.fromarray(to_uint8(chw).transpose(1, 2, 0)).save(path)
