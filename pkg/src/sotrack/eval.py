"""OPE benchmark harness: dataset loading, per-frame errors, success/precision curves."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BoundingBox, center_error, iou

log = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"}
GT_NAMES = ("groundtruth_rect.txt", "groundtruth.txt")
# sequences whose fused result is known to fall behind the appearance-only tracker
FRAGILE_SEQUENCES = ("Bird2", "Coupon", "Freeman4")


class DatasetError(ValueError):
    pass


@dataclass
class Sequence:
    name: str
    frames: list[Path]
    ground_truth: list[BoundingBox | None]
    visible: list[bool]
    attributes: list[str] = field(default_factory=list)

    @property
    def init_box(self) -> BoundingBox:
        return self.ground_truth[0]

    def __len__(self) -> int:
        return len(self.frames)


_SPLIT = re.compile(r"[,\s]+")


def parse_boxes(text: str, source: str = "<ground truth>") -> list[BoundingBox | None]:
    """One ``x,y,w,h`` per line; commas and/or whitespace separate fields.

    Rows with NaN or non-positive extent mean the target is unannotated in
    that frame and come back as ``None``.
    """
    out: list[BoundingBox | None] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(f"{source}:{lineno}: cannot parse {line!r}") from None
        if len(vals) != 4:
            raise DatasetError(f"{source}:{lineno}: expected 4 values, got {len(vals)}")
        box = BoundingBox(*vals)
        out.append(box if np.all(np.isfinite(vals)) and box.w > 0 and box.h > 0 else None)
    return out


def parse_flags(text: str) -> list[bool]:
    return [p not in ("0", "0.0") for p in _SPLIT.split(text.strip()) if p]


def _numeric_key(path: Path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else -1, path.name)


def _find_images(root: Path) -> list[Path]:
    for sub in ("img", "imgs", "images", "color", "."):
        d = root / sub
        if d.is_dir():
            imgs = [p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
            if imgs:
                return sorted(imgs, key=_numeric_key)
    raise DatasetError(f"{root}: no image folder found")


def _find_ground_truth(root: Path) -> Path:
    for name in GT_NAMES:
        if (root / name).is_file():
            return root / name
    cands = sorted(root.glob("*_gt.txt")) + sorted(root.glob("groundtruth_rect*.txt"))
    if cands:
        return cands[0]
    raise DatasetError(f"{root}: no ground-truth file found")


def load_sequence(root_dir: str | Path) -> Sequence:
    """Read one sequence in OTB/LaSOT-style layout.

    A ``full_occlusion.txt`` and/or ``out_of_view.txt`` file (1 = hidden)
    marks frames excluded from scoring. Attribute tags are read from
    ``attributes.txt`` when present.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    frames = _find_images(root)
    gt_path = _find_ground_truth(root)
    gt = parse_boxes(gt_path.read_text(), str(gt_path))
    visible = [b is not None for b in gt]
    for name in ("full_occlusion.txt", "out_of_view.txt"):
        f = root / name
        if f.is_file():
            hidden = parse_flags(f.read_text())
            visible = [v and not (i < len(hidden) and hidden[i]) for i, v in enumerate(visible)]
    n = min(len(frames), len(gt))
    if len(frames) != len(gt):
        log.warning("%s: %d frames but %d annotations, truncating to %d", root.name, len(frames), len(gt), n)
    if n == 0 or gt[0] is None:
        raise DatasetError(f"{root}: first frame has no valid box")
    attrs = []
    if (root / "attributes.txt").is_file():
        attrs = [a for a in _SPLIT.split((root / "attributes.txt").read_text()) if a]
    return Sequence(root.name, frames[:n], gt[:n], visible[:n], attrs)


def list_sequences(dataset_root: str | Path) -> list[Path]:
    root = Path(dataset_root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    out = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            _find_ground_truth(d)
        except DatasetError:
            continue
        out.append(d)
    return out


# --------------------------------------------------------------------------


@dataclass
class EvalResult:
    name: str
    ious: np.ndarray
    errors: np.ndarray
    success: np.ndarray
    precision: np.ndarray
    auc: float
    dp20: float
    fps: float = 0.0
    n_frames: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name, "auc": self.auc, "dp20": self.dp20, "fps": self.fps,
            "frames": self.n_frames, "scored_frames": int(len(self.ious)),
            "success_thresholds": SUCCESS_THRESHOLDS.tolist(), "success": self.success.tolist(),
            "precision_thresholds": PRECISION_THRESHOLDS.tolist(), "precision": self.precision.tolist(),
            "fragile": self.name in FRAGILE_SEQUENCES,
        }


def success_curve(ious) -> np.ndarray:
    ious = np.asarray(ious, dtype=np.float64)
    return (ious[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)


def precision_curve(errors) -> np.ndarray:
    errors = np.asarray(errors, dtype=np.float64)
    return (errors[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)


def summarize(ious, errors, name: str = "", fps: float = 0.0, n_frames: int | None = None) -> EvalResult:
    """Success (IoU strictly above each threshold) and precision (error at most each threshold)."""
    ious = np.asarray(ious, dtype=np.float64).ravel()
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if ious.size == 0:
        raise ValueError("no frames to summarize")
    if ious.shape != errors.shape:
        raise ValueError("ious and errors differ in length")
    s, p = success_curve(ious), precision_curve(errors)
    return EvalResult(name, ious, errors, s, p, float(s.mean()), float(p[20]), fps,
                      len(ious) if n_frames is None else n_frames)


def evaluate(pred: list[BoundingBox], seq: Sequence, fps: float = 0.0) -> EvalResult:
    if len(pred) != len(seq):
        raise ValueError(f"{seq.name}: {len(pred)} predictions for {len(seq)} frames")
    ious, errs = [], []
    for p, g, v in zip(pred, seq.ground_truth, seq.visible):
        if g is None or not v:
            continue
        ious.append(iou(p, g))
        errs.append(center_error(p, g))
    return summarize(ious, errs, seq.name, fps, len(pred))


# --------------------------------------------------------------------------
# persistence


def write_boxes(path: str | Path, boxes: list[BoundingBox]) -> None:
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(f"{b.x:.4f},{b.y:.4f},{b.w:.4f},{b.h:.4f}\n")


def read_boxes(path: str | Path) -> list[BoundingBox]:
    return parse_boxes(Path(path).read_text(), str(path))


def write_summary(path: str | Path, results: list[EvalResult], meta: dict | None = None) -> dict:
    results = sorted(results, key=lambda r: r.name)
    doc = {
        "meta": {"success_points": len(SUCCESS_THRESHOLDS), "success_rule": "iou > t",
                 "precision_rule": "error <= p", **(meta or {})},
        "mean_auc": float(np.mean([r.auc for r in results])) if results else None,
        "mean_dp20": float(np.mean([r.dp20 for r in results])) if results else None,
        "sequences": [r.to_dict() for r in results],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def read_summary(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if "sequences" not in doc:
        raise DatasetError(f"{path}: not a summary file")
    return doc


def mean_curves(doc: dict) -> tuple[np.ndarray, np.ndarray]:
    seqs = doc["sequences"]
    if not seqs:
        raise DatasetError("summary has no sequences")
    return (np.mean([s["success"] for s in seqs], axis=0), np.mean([s["precision"] for s in seqs], axis=0))


def svg_curve(xs, ys, title: str, xlabel: str, ylabel: str, width: int = 480, height: int = 360) -> str:
    """Minimal standalone SVG line plot of one curve with y in [0, 1]."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ml, mr, mt, mb = 50, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    x0, x1 = float(xs.min()), float(xs.max())
    span = (x1 - x0) or 1.0
    pts = " ".join(f"{ml + (x - x0) / span * pw:.2f},{mt + (1 - y) * ph:.2f}" for x, y in zip(xs, ys))
    ticks = "".join(
        f'<text x="{ml - 6}" y="{mt + (1 - t) * ph + 4:.1f}" font-size="10" text-anchor="end">{t:.1f}</text>'
        for t in np.linspace(0, 1, 6))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>\n'
        f'<text x="{width / 2}" y="18" font-size="13" text-anchor="middle">{title}</text>\n'
        f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="11" text-anchor="middle">{xlabel}</text>\n'
        f'<text x="12" y="{mt + ph / 2}" font-size="11" transform="rotate(-90 12 {mt + ph / 2})" '
        f'text-anchor="middle">{ylabel}</text>\n{ticks}\n'
        f'<polyline fill="none" stroke="#c03030" stroke-width="2" points="{pts}"/>\n</svg>\n')


def write_curves_csv(path: str | Path, xs, ys, xname: str, yname: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"{xname},{yname}\n")
        for x, y in zip(xs, ys):
            fh.write(f"{x:g},{y:.6f}\n")
