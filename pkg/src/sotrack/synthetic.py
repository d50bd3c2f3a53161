"""Deterministic synthetic sequences in OTB layout.

Three scenes exercise the tracker without external data: a static scene, a
textured square moving at constant velocity over a panning background, and a
square that is fully hidden by an occluder for ten frames.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .boxes import BoundingBox

FRAME_W, FRAME_H = 240, 180
OBJ = 40


@dataclass
class SyntheticSequence:
    name: str
    frames: list[np.ndarray]
    boxes: list[BoundingBox]
    visible: list[bool]


def _smooth_texture(rng: np.random.Generator, h: int, w: int, blur: float, lo: int, hi: int) -> np.ndarray:
    noise = rng.random((h, w, 3)).astype(np.float32)
    noise = cv2.GaussianBlur(noise, (0, 0), blur)
    noise -= noise.min(axis=(0, 1))
    noise /= noise.max(axis=(0, 1)) + 1e-9
    return (lo + (hi - lo) * noise).astype(np.uint8)


def _object_texture(rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:OBJ, 0:OBJ]
    checker = ((yy // 8 + xx // 8) % 2).astype(np.float32)
    obj = np.empty((OBJ, OBJ, 3), np.float32)
    obj[..., 0] = 200 * checker + 40
    obj[..., 1] = 60 + 120 * (1 - checker)
    obj[..., 2] = 30 + 30 * rng.random((OBJ, OBJ))
    cv2.circle(obj, (OBJ // 2, OBJ // 2), 9, (250, 250, 60), -1)
    return np.clip(obj, 0, 255).astype(np.uint8)


def _paste(canvas: np.ndarray, patch: np.ndarray, x: int, y: int) -> None:
    h, w = patch.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, canvas.shape[1]), min(y + h, canvas.shape[0])
    if x1 > x0 and y1 > y0:
        canvas[y0:y1, x0:x1] = patch[y0 - y:y1 - y, x0 - x:x1 - x]


def static_scene(n_frames: int = 30, seed: int = 1) -> SyntheticSequence:
    rng = np.random.default_rng(seed)
    bg = _smooth_texture(rng, FRAME_H, FRAME_W, 3.0, 40, 200)
    obj = _object_texture(rng)
    frame = bg.copy()
    x, y = 100, 70
    _paste(frame, obj, x, y)
    box = BoundingBox(x, y, OBJ, OBJ)
    return SyntheticSequence("static", [frame.copy() for _ in range(n_frames)],
                             [box] * n_frames, [True] * n_frames)


def moving_scene(n_frames: int = 60, seed: int = 2, velocity=(2, 1), pan=(-1, 0)) -> SyntheticSequence:
    rng = np.random.default_rng(seed)
    margin = abs(pan[0]) * n_frames + 8, abs(pan[1]) * n_frames + 8
    big = _smooth_texture(rng, FRAME_H + 2 * margin[1], FRAME_W + 2 * margin[0], 2.5, 30, 220)
    obj = _object_texture(rng)
    frames, boxes = [], []
    x0, y0 = 40, 50
    for t in range(n_frames):
        ox = margin[0] - pan[0] * t
        oy = margin[1] - pan[1] * t
        frame = big[oy:oy + FRAME_H, ox:ox + FRAME_W].copy()
        x, y = x0 + velocity[0] * t, y0 + velocity[1] * t
        _paste(frame, obj, x, y)
        frames.append(frame)
        boxes.append(BoundingBox(x, y, OBJ, OBJ))
    return SyntheticSequence("moving", frames, boxes, [True] * n_frames)


def occlusion_scene(n_frames: int = 50, seed: int = 3, start: int = 20, length: int = 10) -> SyntheticSequence:
    """Object drifts slowly; a solid occluder hides it fully for ``length`` frames."""
    rng = np.random.default_rng(seed)
    bg = _smooth_texture(rng, FRAME_H, FRAME_W, 3.0, 40, 200)
    obj = _object_texture(rng)
    occluder = np.empty((OBJ + 24, OBJ + 24, 3), np.uint8)
    occluder[...] = (20, 90, 230)
    frames, boxes, visible = [], [], []
    for t in range(n_frames):
        frame = bg.copy()
        x, y = 80 + t // 2, 60
        _paste(frame, obj, x, y)
        hidden = start <= t < start + length
        if hidden:
            _paste(frame, occluder, x - 12, y - 12)
        frames.append(frame)
        boxes.append(BoundingBox(x, y, OBJ, OBJ))
        visible.append(not hidden)
    return SyntheticSequence("occlusion", frames, boxes, visible)


def all_scenes() -> list[SyntheticSequence]:
    return [static_scene(), moving_scene(), occlusion_scene()]


def write_otb(seq: SyntheticSequence, root: str | Path) -> Path:
    """Write ``root/<name>/img/0001.png ...`` plus ground truth and visibility."""
    d = Path(root) / seq.name
    (d / "img").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        cv2.imwrite(str(d / "img" / f"{i:04d}.png"), frame[:, :, ::-1], [cv2.IMWRITE_PNG_COMPRESSION, 9])
    with open(d / "groundtruth_rect.txt", "w") as fh:
        for b in seq.boxes:
            fh.write(f"{b.x:g},{b.y:g},{b.w:g},{b.h:g}\n")
    if not all(seq.visible):
        with open(d / "full_occlusion.txt", "w") as fh:
            fh.write(",".join("0" if v else "1" for v in seq.visible) + "\n")
    return d
