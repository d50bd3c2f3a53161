"""Hand-crafted feature maps for the correlation filter.

Feature maps are stored as ``(ny, nx, D)`` float arrays (rows first), where
``D = 31 (fHOG) + 10 (color names) + 1 (gray mean)`` for color input and
``D = 31 + 1`` for grayscale input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import cv2
import numpy as np

from .boxes import BoundingBox

HOG_CHANNELS = 31
CN_CHANNELS = 10
CN_TABLE_ROWS = 32768
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_CN_TABLE = Path(__file__).with_name("data") / "cn_table.bin"

_HOG_BINS = 18
_HOG_CLIP = 0.2
_HOG_EPS = 1e-4
_TEXTURE_GAIN = 0.2357


@dataclass
class Frame:
    """One decoded video frame.

    ``pixels`` is ``H x W x 3`` uint8 in RGB order. Grayscale sources are
    replicated into three equal channels and flagged with ``is_color=False``.
    """

    pixels: np.ndarray
    index: int = 1
    path: str = ""
    is_color: bool = True
    _gray: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = np.repeat(px[:, :, None], 3, axis=2)
            self.is_color = False
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected H x W x 3 pixels, got shape {px.shape}")
        self.pixels = np.ascontiguousarray(px, dtype=np.uint8)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def gray(self) -> np.ndarray:
        """Luma view as float64 in [0, 255]."""
        if self._gray is None:
            self._gray = to_gray(self.pixels)
        return self._gray


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def load_frame(path: str | Path, index: int = 1, force_gray: bool = False) -> Frame:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot decode image {path}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[:, :, :3]
        img = img[:, :, ::-1]
        if img.dtype != np.uint8:
            img = (img / 257).astype(np.uint8)
        same = np.array_equal(img[..., 0], img[..., 1]) and np.array_equal(img[..., 1], img[..., 2])
        if force_gray or same:
            return Frame(np.ascontiguousarray(img[..., 0]), index, str(path))
        return Frame(img, index, str(path))
    if img.dtype != np.uint8:
        img = (img / 257).astype(np.uint8)
    return Frame(img, index, str(path))


# --------------------------------------------------------------------------
# patches


def crop_region(image: np.ndarray, cx: float, cy: float, src_w: float, src_h: float,
                out_w: int, out_h: int) -> np.ndarray:
    """Crop a src_w x src_h region centered at (cx, cy), resampled to out_w x out_h.

    Pixels outside the image are filled by edge replication.
    """
    if src_w < 1 or src_h < 1:
        raise ValueError("degenerate box")
    nw = max(1, int(round(src_w)))
    nh = max(1, int(round(src_h)))
    x0 = int(math.floor(cx - nw / 2.0 + 0.5))
    y0 = int(math.floor(cy - nh / 2.0 + 0.5))
    xs = np.clip(np.arange(x0, x0 + nw), 0, image.shape[1] - 1)
    ys = np.clip(np.arange(y0, y0 + nh), 0, image.shape[0] - 1)
    patch = image[ys[:, None], xs[None, :]]
    if (nw, nh) != (out_w, out_h):
        interp = cv2.INTER_AREA if nw * nh > out_w * out_h else cv2.INTER_LINEAR
        src = patch if patch.dtype != np.float64 else patch.astype(np.float32)
        patch = cv2.resize(src, (int(out_w), int(out_h)), interpolation=interp)
    return patch


def extract_patch(frame: Frame, box: BoundingBox, pad: float = 1.0,
                  out_size: tuple[int, int] | None = None) -> np.ndarray:
    """Color patch centered on ``box`` covering ``pad`` times its extent.

    ``out_size`` is ``(width, height)``; by default the source extent is kept.
    """
    if box.w < 1 or box.h < 1:
        raise ValueError("degenerate box")
    if pad < 1:
        raise ValueError("pad must be >= 1")
    src_w, src_h = box.w * pad, box.h * pad
    if out_size is None:
        out_size = (max(1, int(round(src_w))), max(1, int(round(src_h))))
    return crop_region(frame.pixels, box.cx, box.cy, src_w, src_h, out_size[0], out_size[1])


# --------------------------------------------------------------------------
# fHOG


def _cell_weights(length: int, cell_size: int) -> np.ndarray:
    """Bilinear pixel-to-cell weights, shape (cells, length); each column sums to 1."""
    n = length // cell_size
    pos = (np.arange(length) + 0.5) / cell_size - 0.5
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    weights = np.zeros((n, length))
    cols = np.arange(length)
    np.add.at(weights, (np.clip(lo, 0, n - 1), cols), 1.0 - frac)
    np.add.at(weights, (np.clip(lo + 1, 0, n - 1), cols), frac)
    return weights


def _gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(gray, 1, mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return dx, dy


def orientation_histograms(gray: np.ndarray, cell_size: int) -> np.ndarray:
    """Signed 18-bin gradient histograms per cell, shape (ny, nx, 18).

    Orientation is soft-binned between the two nearest 20-degree bin centers
    (bin 0 centered on 0 rad); magnitude is spread bilinearly over cells.
    """
    dx, dy = _gradients(gray)
    mag = np.hypot(dx, dy)
    theta = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    pos = theta / (2 * np.pi / _HOG_BINS)
    lo = np.floor(pos).astype(int) % _HOG_BINS
    frac = pos - np.floor(pos)
    hh, ww = gray.shape
    per_pixel = np.zeros((hh * ww, _HOG_BINS))
    pix = np.arange(hh * ww)
    lo = lo.ravel()
    per_pixel[pix, lo] = (mag * (1.0 - frac)).ravel()
    per_pixel[pix, (lo + 1) % _HOG_BINS] += (mag * frac).ravel()
    per_pixel = per_pixel.reshape(hh, ww, _HOG_BINS)
    wy = _cell_weights(hh, cell_size)
    wx = _cell_weights(ww, cell_size)
    tmp = np.tensordot(wy, per_pixel, axes=(1, 0))
    return np.tensordot(tmp, wx, axes=(1, 1)).transpose(0, 2, 1)


def compute_hog(gray: np.ndarray, cell_size: int = 4) -> np.ndarray:
    """31-channel Felzenszwalb HOG: 18 signed + 9 unsigned orientations + 4 texture."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError("compute_hog expects a 2-D grayscale patch")
    hh, ww = gray.shape
    if hh < cell_size or ww < cell_size:
        raise ValueError("patch smaller than one cell")
    if hh % cell_size or ww % cell_size:
        raise ValueError(f"patch {ww}x{hh} not divisible by cell size {cell_size}")

    hist = orientation_histograms(gray, cell_size)
    unsigned = hist[..., :9] + hist[..., 9:]
    energy = np.pad(np.sum(unsigned ** 2, axis=2), 1, mode="edge")
    ny, nx = hist.shape[:2]

    # 2x2 block energies; block (a, b) covers cells offset by a, b in {-1, +1}
    norms = []
    for oy in (0, 1):
        for ox in (0, 1):
            block = (energy[oy:oy + ny, ox:ox + nx] + energy[oy + 1:oy + 1 + ny, ox:ox + nx]
                     + energy[oy:oy + ny, ox + 1:ox + 1 + nx]
                     + energy[oy + 1:oy + 1 + ny, ox + 1:ox + 1 + nx])
            norms.append(1.0 / np.sqrt(block + _HOG_EPS))

    out = np.zeros((ny, nx, HOG_CHANNELS))
    for k, n in enumerate(norms):
        signed = np.minimum(hist * n[..., None], _HOG_CLIP)
        out[..., :18] += 0.5 * signed
        out[..., 18:27] += 0.5 * np.minimum(unsigned * n[..., None], _HOG_CLIP)
        out[..., 27 + k] = _TEXTURE_GAIN * signed.sum(axis=2)
    return out


# --------------------------------------------------------------------------
# color names

# Prototype colors for the ten color-name channels (RGB).
CN_PROTOTYPES = {
    "black": (0, 0, 0),
    "white": (255, 255, 255),
    "grey": (128, 128, 128),
    "red": (220, 30, 30),
    "orange": (255, 140, 0),
    "yellow": (240, 220, 30),
    "green": (40, 160, 40),
    "blue": (30, 60, 200),
    "purple": (130, 40, 160),
    "brown": (130, 80, 30),
}


def build_cn_table(sigma_lab: float = 15.0) -> np.ndarray:
    """Soft assignment of the 32^3 quantized RGB bins to the ten prototypes.

    Row index is ``r // 8 + 32 * (g // 8) + 1024 * (b // 8)``; each row is a
    softmax over negative squared Lab distances, so rows sum to one.
    """
    q = np.arange(32) * 8 + 4
    b, g, r = np.meshgrid(q, q, q, indexing="ij")
    rgb = np.stack([r.ravel(), g.ravel(), b.ravel()], axis=1).astype(np.float32) / 255.0
    lab = cv2.cvtColor(rgb[None], cv2.COLOR_RGB2LAB)[0].astype(np.float64)
    protos = np.array(list(CN_PROTOTYPES.values()), dtype=np.float32)[None] / 255.0
    plab = cv2.cvtColor(protos, cv2.COLOR_RGB2LAB)[0].astype(np.float64)
    d2 = ((lab[:, None, :] - plab[None, :, :]) ** 2).sum(axis=2)
    logits = -d2 / (2.0 * sigma_lab ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p.astype(np.float32)


def write_cn_table(path: str | Path, table: np.ndarray) -> None:
    np.asarray(table, dtype="<f4").reshape(CN_TABLE_ROWS, CN_CHANNELS).tofile(str(path))


@lru_cache(maxsize=4)
def load_cn_table(path: str | Path | None = None) -> np.ndarray:
    """Read the row-major little-endian float32 32768 x 10 table."""
    path = Path(path) if path is not None else DEFAULT_CN_TABLE
    if not path.is_file():
        raise FileNotFoundError(f"color-name table not found: {path}")
    raw = np.fromfile(str(path), dtype="<f4")
    if raw.size != CN_TABLE_ROWS * CN_CHANNELS:
        raise ValueError(f"color-name table {path} has {raw.size} values, "
                         f"expected {CN_TABLE_ROWS * CN_CHANNELS}")
    table = raw.reshape(CN_TABLE_ROWS, CN_CHANNELS).astype(np.float64)
    table.setflags(write=False)
    return table


def _pool(values: np.ndarray, cell_size: int) -> np.ndarray:
    hh, ww = values.shape[:2]
    ny, nx = hh // cell_size, ww // cell_size
    v = values[:ny * cell_size, :nx * cell_size]
    shape = (ny, cell_size, nx, cell_size) + v.shape[2:]
    return v.reshape(shape).mean(axis=(1, 3))


def compute_cn(rgb: np.ndarray, table: np.ndarray, cell_size: int = 4) -> np.ndarray:
    """Per-pixel color-name probabilities, average-pooled per cell."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("compute_cn expects an H x W x 3 color patch")
    q = np.clip(rgb, 0, 255).astype(np.int64) // 8
    idx = q[..., 0] + 32 * q[..., 1] + 1024 * q[..., 2]
    return _pool(table[idx], cell_size)


def gray_mean_channel(gray: np.ndarray, cell_size: int = 4) -> np.ndarray:
    return _pool(np.asarray(gray, dtype=np.float64) / 255.0 - 0.5, cell_size)[..., None]


def extract_features(patch: np.ndarray, cell_size: int = 4, cn_table: np.ndarray | None = None) -> np.ndarray:
    """Full feature stack for a patch; color names are skipped when cn_table is None."""
    gray = to_gray(patch)
    parts = [compute_hog(gray, cell_size)]
    if cn_table is not None and patch.ndim == 3:
        parts.append(compute_cn(patch, cn_table, cell_size))
    parts.append(gray_mean_channel(gray, cell_size))
    return np.concatenate(parts, axis=2)


# --------------------------------------------------------------------------
# windowing


def hann_window(nx: int, ny: int) -> np.ndarray:
    """Raised-cosine window of shape (ny, nx); zero on the border ring."""
    return np.outer(np.hanning(ny), np.hanning(nx))


def apply_window(fmap: np.ndarray, window: np.ndarray) -> np.ndarray:
    if fmap.shape[:2] != window.shape:
        raise ValueError(f"window {window.shape} does not match feature map {fmap.shape[:2]}")
    if fmap.ndim == 2:
        return fmap * window
    return fmap * window[:, :, None]


if __name__ == "__main__":
    write_cn_table(DEFAULT_CN_TABLE, build_cn_table())
    print(f"wrote {DEFAULT_CN_TABLE}")
