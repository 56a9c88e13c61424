"""Image, mask and PFM depth file I/O."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..errors import IngestionError
from ..warping import DepthMap


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-down float32 array ((H, W) or (H, W, 3))."""
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IngestionError(f"cannot open PFM file {path}: {exc}") from exc
    with fh:
        header = fh.readline().rstrip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise IngestionError(f"{path}: not a PFM file (header {header[:8]!r})")
        dims = fh.readline()
        match = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not match:
            raise IngestionError(f"{path}: malformed PFM dimensions line {dims!r}")
        width, height = int(match.group(1)), int(match.group(2))
        try:
            scale = float(fh.readline().strip())
        except ValueError as exc:
            raise IngestionError(f"{path}: malformed PFM scale line") from exc
        if scale == 0:
            raise IngestionError(f"{path}: PFM scale must be non-zero")
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        data = np.frombuffer(fh.read(), dtype=endian + "f4")
    if data.size != count:
        raise IngestionError(f"{path}: expected {count} floats, found {data.size}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    # rows are stored bottom-up
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path, data: np.ndarray, little_endian: bool = True) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    elif data.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) arrays, got {data.shape}")
    height, width = data.shape[:2]
    endian = "<" if little_endian else ">"
    scale = -1.0 if little_endian else 1.0
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{width} {height}\n".encode())
        fh.write(f"{scale}\n".encode())
        fh.write(np.flipud(data).astype(endian + "f4").tobytes())


def read_image(path, white_background: bool = False) -> np.ndarray:
    """8-bit image to float32 RGB in [0, 1]; alpha is composited onto white or black."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    if img.mode in ("RGBA", "LA") or (img.mode == "P" and "transparency" in img.info):
        arr = np.asarray(img.convert("RGBA"), dtype=np.float32) / 255.0
        rgb, alpha = arr[..., :3], arr[..., 3:]
        bg = 1.0 if white_background else 0.0
        return (rgb * alpha + bg * (1.0 - alpha)).astype(np.float32)
    return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def write_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def read_mask(path) -> np.ndarray:
    try:
        return np.asarray(Image.open(path).convert("L")) > 127
    except OSError as exc:
        raise IngestionError(f"cannot read mask {path}: {exc}") from exc


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def resize_image(img: np.ndarray, size) -> np.ndarray:
    """Area-resample an RGB float image to ``size = (height, width)``."""
    height, width = size
    if img.shape[:2] == (height, width):
        return img
    chans = [np.asarray(Image.fromarray(img[..., c].astype(np.float32), mode="F").resize((width, height), Image.BOX))
             for c in range(img.shape[2])]
    return np.stack(chans, axis=-1).astype(np.float32)


def resize_depth(depth: np.ndarray, mask: np.ndarray, size):
    """Nearest-center resample of a depth map and its mask."""
    height, width = size
    h0, w0 = depth.shape
    rows = np.minimum(((np.arange(height) + 0.5) * h0 / height).astype(int), h0 - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * w0 / width).astype(int), w0 - 1)
    return depth[np.ix_(rows, cols)], mask[np.ix_(rows, cols)]


def load_depth_map(path, expected_size=None, mask_path=None) -> DepthMap:
    """Read a PFM depth map (plus optional 8-bit mask) as a validated :class:`DepthMap`.

    Pixels with zero or non-finite depth are treated as invalid unless a mask
    file is given, in which case every masked pixel must carry positive depth.
    """
    values = read_pfm(path)
    if values.ndim != 2:
        raise IngestionError(f"{path}: depth PFM must be single-channel")
    if expected_size is not None and tuple(values.shape) != tuple(expected_size):
        raise IngestionError(f"{path}: depth is {values.shape[0]}x{values.shape[1]}, expected "
                             f"{expected_size[0]}x{expected_size[1]}")
    if mask_path is not None:
        mask = read_mask(mask_path)
        if mask.shape != values.shape:
            raise IngestionError(f"{mask_path}: mask size {mask.shape} does not match depth {values.shape}")
        bad = mask & ~(np.isfinite(values) & (values > 0))
        if bad.any():
            raise IngestionError(f"{path}: {int(bad.sum())} masked pixels have non-positive depth")
    else:
        mask = np.isfinite(values) & (values > 0)
    values = np.where(mask, values, 0.0).astype(np.float32)
    return DepthMap(torch.from_numpy(values.astype(np.float64)), torch.from_numpy(mask))


def save_depth_map(path, depth: DepthMap, mask_path=None) -> None:
    values, mask = depth.numpy()
    write_pfm(path, np.where(mask, values, 0.0))
    if mask_path is not None:
        write_mask(mask_path, mask)

