"""Global background motion: corner matching, affine fit and residual boxes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import BoundingBox


@dataclass(frozen=True)
class AffineModel:
    """x' = a0 + a1*x + a2*y, y' = b0 + b1*x + b2*y."""
    a0: float = 0.0
    a1: float = 1.0
    a2: float = 0.0
    b0: float = 0.0
    b1: float = 0.0
    b2: float = 1.0

    @classmethod
    def identity(cls) -> "AffineModel":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        """2x3 forward map in the layout cv2.warpAffine expects."""
        return np.array([[self.a1, self.a2, self.a0], [self.b1, self.b2, self.b0]])

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def rescaled(self, s: float) -> "AffineModel":
        """Same motion expressed in coordinates multiplied by ``s``."""
        return AffineModel(self.a0 * s, self.a1, self.a2, self.b0 * s, self.b1, self.b2)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.matrix)))


class MotionError(RuntimeError):
    pass


@dataclass
class Correspondences:
    src: np.ndarray   # (n, 2) points in frame t
    dst: np.ndarray   # (n, 2) matched points in frame t+1
    cost: np.ndarray  # mean absolute difference per match

    def __len__(self) -> int:
        return len(self.src)

    @property
    def pairs(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        return [((float(a[0]), float(a[1])), (float(b[0]), float(b[1]))) for a, b in zip(self.src, self.dst)]


def detect_corners(gray: np.ndarray, max_points: int = 50, exclude: BoundingBox | None = None,
                   margin: int = 0, grid: int = 5, nms: int = 7, rel_thresh: float = 0.01) -> np.ndarray:
    """Harris corners after non-max suppression, spread over a ``grid`` x ``grid`` layout.

    The strongest corner of every grid cell is taken first, remaining slots are
    filled by global strength. Points inside ``exclude`` or closer than
    ``margin`` to the border are never returned. Result is (n, 2) as (x, y).
    """
    g = np.asarray(gray, dtype=np.float32)
    h, w = g.shape
    resp = cv2.cornerHarris(g, 3, 3, 0.04)
    valid = np.ones(resp.shape, bool)
    if margin > 0:
        valid[:margin] = valid[h - margin:] = False
        valid[:, :margin] = valid[:, w - margin:] = False
    if exclude is not None:
        x0, y0 = max(0, int(math.floor(exclude.x))), max(0, int(math.floor(exclude.y)))
        x1, y1 = int(math.ceil(exclude.x2)), int(math.ceil(exclude.y2))
        valid[y0:y1, x0:x1] = False
    # the threshold is relative to the strongest eligible corner
    peak = float(resp[valid].max()) if valid.any() else 0.0
    if peak <= 0:
        return np.zeros((0, 2))
    local = resp >= cv2.dilate(resp, np.ones((nms, nms), np.uint8))
    mask = valid & local & (resp > rel_thresh * peak)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return np.zeros((0, 2))
    strength = resp[ys, xs]
    order = np.lexsort((xs, ys, -strength))
    ys, xs = ys[order], xs[order]
    cell = (ys * grid // h) * grid + xs * grid // w
    _, first = np.unique(cell, return_index=True)
    first = np.sort(first)
    rest = np.setdiff1d(np.arange(len(xs)), first)
    pick = np.concatenate([first, rest])[:max_points]
    return np.stack([xs[pick], ys[pick]], axis=1).astype(np.float64)


def _sad_search(tpl: np.ndarray, region: np.ndarray) -> tuple[int, int, float]:
    """Offset (dx, dy) of the best SAD placement of ``tpl`` inside ``region``."""
    sad = np.abs(sliding_window_view(region, tpl.shape) - tpl).sum(axis=(2, 3))
    k = int(np.argmin(sad))
    dy, dx = divmod(k, sad.shape[1])
    return dx, dy, float(sad.flat[k]) / tpl.size


def build_correspondences(prev_gray: np.ndarray, cur_gray: np.ndarray, max_points: int = 50,
                          exclude: BoundingBox | None = None, window: int = 21, search: int = 20,
                          max_cost: float = 12.0, refine: int = 2) -> Correspondences:
    """Match corners of ``prev_gray`` into ``cur_gray`` by SAD block search.

    The +-``search`` range is scanned at half resolution, then the best
    offset is refined within +-``refine`` px at full resolution. ``max_cost``
    bounds the mean absolute difference of an accepted match.
    """
    prev = np.asarray(prev_gray, dtype=np.float32)
    cur = np.asarray(cur_gray, dtype=np.float32)
    if prev.shape != cur.shape:
        raise ValueError(f"frame sizes differ: {prev.shape} vs {cur.shape}")
    r = window // 2
    pts = detect_corners(prev, max_points, exclude, margin=r)
    pad = r + search + refine
    cur_p = np.pad(cur, pad, mode="edge")
    prev_p = np.pad(prev, pad, mode="edge")
    half_prev = cv2.resize(prev_p, None, fx=0.5, fy=0.5, interpolation=cv2.INTER_AREA)
    half_cur = cv2.resize(cur_p, None, fx=0.5, fy=0.5, interpolation=cv2.INTER_AREA)
    hr, hs = r // 2, (search + 1) // 2
    src, dst, cost = [], [], []
    for x, y in pts.astype(int):
        px, py = x + pad, y + pad
        qx, qy = px // 2, py // 2
        tpl = half_prev[qy - hr:qy + hr + 1, qx - hr:qx + hr + 1]
        region = half_cur[qy - hr - hs:qy + hr + hs + 1, qx - hr - hs:qx + hr + hs + 1]
        dx, dy, _ = _sad_search(tpl, region)
        gx = min(max(2 * (dx - hs), -search), search)
        gy = min(max(2 * (dy - hs), -search), search)
        tpl = prev_p[py - r:py + r + 1, px - r:px + r + 1]
        cx, cy = px + gx, py + gy
        region = cur_p[cy - r - refine:cy + r + refine + 1, cx - r - refine:cx + r + refine + 1]
        dx, dy, c = _sad_search(tpl, region)
        if c > max_cost:
            continue
        src.append((x, y))
        dst.append((x + gx + dx - refine, y + gy + dy - refine))
        cost.append(c)
    if len(src) < 3:
        raise MotionError("insufficient correspondences")
    return Correspondences(np.array(src, float), np.array(dst, float), np.array(cost))


def _lstsq_affine(src: np.ndarray, dst: np.ndarray) -> AffineModel:
    a = np.column_stack([np.ones(len(src)), src[:, 0], src[:, 1]])
    if len(src) < 3 or np.linalg.matrix_rank(a, tol=1e-9 * max(1.0, float(np.abs(a).max()))) < 3:
        raise MotionError("degenerate geometry")
    coef, *_ = np.linalg.lstsq(a, dst, rcond=None)
    return AffineModel(coef[0, 0], coef[1, 0], coef[2, 0], coef[0, 1], coef[1, 1], coef[2, 1])


def fit_affine(c: Correspondences, reject_px: float = 3.0) -> AffineModel:
    """Least-squares affine fit, refit once without pairs off by more than ``reject_px``."""
    src = np.asarray(c.src, dtype=np.float64)
    dst = np.asarray(c.dst, dtype=np.float64)
    model = _lstsq_affine(src, dst)
    err = np.linalg.norm(model.apply(src) - dst, axis=1)
    keep = err <= reject_px
    if not keep.all():
        try:
            model = _lstsq_affine(src[keep], dst[keep])
        except MotionError:
            pass
    return model


def residual_map(prev_gray: np.ndarray, cur_gray: np.ndarray, model: AffineModel) -> np.ndarray:
    """Warped previous frame minus current frame; samples from outside the frame give 0."""
    prev = np.asarray(prev_gray, dtype=np.float32)
    cur = np.asarray(cur_gray, dtype=np.float32)
    if not model.is_finite():
        raise ValueError("non-finite motion model")
    h, w = cur.shape
    m = model.matrix.astype(np.float64)
    pred = cv2.warpAffine(prev, m, (w, h), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    cover = cv2.warpAffine(np.ones_like(prev), m, (w, h), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    res = (pred - cur).astype(np.float64)
    res[cover < 1.0 - 1e-6] = 0.0
    return res


@dataclass
class ResidualBox:
    box: BoundingBox
    size: tuple[float, float]
    energy: float


def propose_box_from_residual(res: np.ndarray, prev_box: BoundingBox, cut: float = 0.1,
                              search: float = 2.0, energy_floor: float = 1e-6) -> ResidualBox | None:
    """Box from thresholded row/column sums of |res| near ``prev_box``.

    The window is ``search`` times the previous box, centered on it. Extent is
    measured from the first to the last column (row) whose sum reaches
    ``cut`` of the largest one; the center is the centroid of |res| in the
    window. ``None`` when the mean absolute residual in the window is at most
    ``energy_floor``.
    """
    if not 0 < cut < 1:
        raise ValueError("cut must lie in (0, 1)")
    a = np.abs(np.asarray(res, dtype=np.float64))
    h, w = a.shape
    cx, cy = prev_box.center
    hw, hh = prev_box.w * search / 2, prev_box.h * search / 2
    x0, x1 = max(0, int(math.floor(cx - hw))), min(w, int(math.ceil(cx + hw)))
    y0, y1 = max(0, int(math.floor(cy - hh))), min(h, int(math.ceil(cy + hh)))
    if x1 <= x0 or y1 <= y0:
        return None
    win = a[y0:y1, x0:x1]
    total = float(win.sum())
    if total <= energy_floor * win.size:
        return None
    cols, rows = win.sum(axis=0), win.sum(axis=1)
    xs = np.nonzero(cols >= cut * cols.max())[0]
    ys = np.nonzero(rows >= cut * rows.max())[0]
    bw = float(xs[-1] + 1 - xs[0])
    bh = float(ys[-1] + 1 - ys[0])
    # pixel i covers [i, i+1), so its center sits at i + 0.5
    mx = float(cols @ (np.arange(len(cols)) + 0.5)) / total + x0
    my = float(rows @ (np.arange(len(rows)) + 0.5)) / total + y0
    return ResidualBox(BoundingBox.from_center(mx, my, bw, bh), (bw, bh), total)


def downscale_factor(shape: tuple[int, ...], max_dim: int = 480) -> float:
    return min(1.0, max_dim / max(shape[0], shape[1]))


@dataclass
class MotionResult:
    model: AffineModel          # full-resolution coordinates
    residual: np.ndarray        # at working resolution
    scale: float                # working / full resolution
    n_matches: int
    fallback: bool


def estimate_motion(prev_gray: np.ndarray, cur_gray: np.ndarray, exclude: BoundingBox | None = None,
                    max_points: int = 50, max_dim: int = 480, window: int = 21, search: int = 20,
                    reject_px: float = 3.0) -> MotionResult:
    """Fit background motion between two frames, falling back to identity on failure."""
    s = downscale_factor(prev_gray.shape, max_dim)
    prev, cur = np.asarray(prev_gray, np.float32), np.asarray(cur_gray, np.float32)
    if s < 1.0:
        size = (max(1, int(round(prev.shape[1] * s))), max(1, int(round(prev.shape[0] * s))))
        prev = cv2.resize(prev, size, interpolation=cv2.INTER_AREA)
        cur = cv2.resize(cur, size, interpolation=cv2.INTER_AREA)
    small_exclude = exclude.scaled(s) if exclude is not None else None
    fallback = False
    n = 0
    try:
        c = build_correspondences(prev, cur, max_points, small_exclude, window, search)
        n = len(c)
        model = fit_affine(c, reject_px)
    except MotionError:
        model = AffineModel.identity()
        fallback = True
    return MotionResult(model.rescaled(1.0 / s), residual_map(prev, cur, model), s, n, fallback)
