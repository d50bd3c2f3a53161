"""Box history and PCA-based extrapolation of position and size."""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from .boxes import BoundingBox

MIN_PCA_SAMPLES = 4


class TrackHistory:
    """Ring buffers of recent boxes, similarity scores and in-box mean colors.

    Scores and colors are optional on push, so frames whose measurements are
    untrustworthy (e.g. occluded ones) can extend the box trajectory without
    polluting the reference statistics used for occlusion detection.
    """

    def __init__(self, n: int = 20):
        if n < 2:
            raise ValueError("history length must be at least 2")
        self.n = n
        self.boxes: deque[BoundingBox] = deque(maxlen=n)
        self.scores: deque[float] = deque(maxlen=n)
        self.color_means: deque[np.ndarray] = deque(maxlen=n)

    def push(self, box: BoundingBox, score: float | None = None,
             color_mean: np.ndarray | None = None) -> "TrackHistory":
        self.boxes.append(box)
        if score is not None:
            self.scores.append(float(score))
        if color_mean is not None:
            self.color_means.append(np.asarray(color_mean, dtype=np.float64))
        return self

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def last(self) -> BoundingBox | None:
        return self.boxes[-1] if self.boxes else None

    def centers(self) -> np.ndarray:
        return np.array([b.center for b in self.boxes], dtype=np.float64).reshape(-1, 2)

    def sizes(self) -> np.ndarray:
        return np.array([(b.w, b.h) for b in self.boxes], dtype=np.float64).reshape(-1, 2)

    def displacements(self) -> np.ndarray:
        return np.diff(self.centers(), axis=0)

    def size_changes(self) -> np.ndarray:
        return np.diff(self.sizes(), axis=0)


def principal_axis(cov: np.ndarray) -> np.ndarray:
    """Unit eigenvector of the larger eigenvalue of a symmetric 2x2 matrix.

    Equal eigenvalues resolve to the x-axis (or the y-axis when only its
    variance is larger and the matrix is diagonal).
    """
    a, b, c = float(cov[0, 0]), float(cov[0, 1]), float(cov[1, 1])
    if b == 0.0:
        return np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    lam = 0.5 * (a + c) + math.hypot(0.5 * (a - c), b)
    v = np.array([lam - c, b])
    return v / np.linalg.norm(v)


def extrapolate(deltas: np.ndarray) -> np.ndarray:
    """Next 2-D increment from a sequence of increments.

    Below four samples this is the mean. Otherwise the centered increments are
    projected on their first principal axis, a least-squares line through the
    coefficients is evaluated one step ahead and the second component is
    dropped.
    """
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 2)
    k = len(d)
    if k == 0:
        return np.zeros(2)
    mean = d.mean(axis=0)
    if k < MIN_PCA_SAMPLES:
        return mean
    centered = d - mean
    v = principal_axis(centered.T @ centered / k)
    coef = centered @ v
    t = np.arange(k, dtype=np.float64)
    slope, intercept = np.polyfit(t, coef, 1)
    return mean + (slope * k + intercept) * v


def predict_center(hist: TrackHistory) -> tuple[float, float] | None:
    if len(hist) == 0:
        return None
    last = hist.centers()[-1]
    step = extrapolate(hist.displacements())
    return float(last[0] + step[0]), float(last[1] + step[1])


def predict_size(hist: TrackHistory, max_change: float = 0.2) -> tuple[float, float]:
    """Extrapolated (w, h), kept within ``max_change`` of the last size."""
    if len(hist) == 0:
        raise ValueError("empty history")
    last = hist.sizes()[-1]
    size = last + extrapolate(hist.size_changes())
    size = np.clip(size, last * (1 - max_change), last * (1 + max_change))
    return float(size[0]), float(size[1])


def predict_box(hist: TrackHistory, max_change: float = 0.2) -> BoundingBox | None:
    c = predict_center(hist)
    if c is None:
        return None
    w, h = predict_size(hist, max_change)
    return BoundingBox.from_center(c[0], c[1], w, h)


def filter_size_estimate(raw: tuple[float, float] | None, hist: TrackHistory, n_std: float = 3.0,
                         max_aspect_change: float = 0.25, std_floor: float = 1.0) -> tuple[float, float] | None:
    """Accept ``raw`` (w, h) only if it follows the recent size trajectory.

    The implied per-frame change must lie within ``n_std`` standard deviations
    of the historical changes (bound inclusive; deviations below
    ``std_floor`` px are treated as ``std_floor``) and the aspect ratio may
    move by at most ``max_aspect_change`` relative to the last box.
    """
    if raw is None or len(hist) == 0:
        return None
    rw, rh = float(raw[0]), float(raw[1])
    if not (rw > 0 and rh > 0 and math.isfinite(rw) and math.isfinite(rh)):
        return None
    last = hist.sizes()[-1]
    changes = hist.size_changes()
    if len(changes):
        mean, std = changes.mean(axis=0), changes.std(axis=0)
    else:
        mean, std = np.zeros(2), np.zeros(2)
    bound = n_std * np.maximum(std, std_floor)
    implied = np.array([rw, rh]) - last
    # tiny slack keeps the inclusive bound robust to rounding in std
    if np.any(np.abs(implied - mean) > bound * (1 + 1e-9) + 1e-12):
        return None
    aspect = (rw / rh) / (last[0] / last[1])
    if abs(aspect - 1.0) > max_aspect_change:
        return None
    return rw, rh
