"""Per-frame pipeline: three proposals, fusion, then the appearance update."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .bgmotion import estimate_motion, propose_box_from_residual
from .boxes import BoundingBox, center_error
from .config import Config
from .dcf import STRCF
from .features import Frame, load_cn_table
from .fusion import (FusionDecision, ModelBank, QualityFlags, agree, assess_quality, detect_occlusion,
                     fuse, similarity_scores)
from .trajectory import TrackHistory, filter_size_estimate, predict_box, predict_size

log = logging.getLogger(__name__)


@dataclass
class FrameLog:
    index: int
    box: BoundingBox
    flags: tuple[int, int, int] | None = None
    case_id: int | None = None
    mu: float | None = None
    updated: bool = False
    occluded: bool = False
    source: str = "app"
    proposals: tuple = (None, None, None)
    scores: np.ndarray | None = None


def box_color_mean(frame: Frame, box: BoundingBox) -> np.ndarray | None:
    """Mean RGB inside ``box`` (clipped to the frame), ``None`` when nothing is covered."""
    x0, y0 = max(0, int(math.floor(box.x))), max(0, int(math.floor(box.y)))
    x1, y1 = min(frame.width, int(math.ceil(box.x2))), min(frame.height, int(math.ceil(box.y2)))
    if x1 <= x0 or y1 <= y0:
        return None
    return frame.pixels[y0:y1, x0:x1].reshape(-1, 3).mean(axis=0)


class Tracker:
    """Online single-object tracker.

    With both the background-motion and trajectory modules switched off the
    step reduces to the plain appearance baseline (search, move, update with
    the fixed mu), which is what the ablation configuration relies on.
    """

    def __init__(self, config: Config | None = None, cn_table: np.ndarray | None = None):
        self.cfg = config or Config()
        if cn_table is None and self.cfg.use_color:
            cn_table = load_cn_table()
        self.app = STRCF(self.cfg.dcf_params(), cn_table)
        self.fp = self.cfg.fusion_params()
        self.bank: ModelBank | None = None
        self.hist = TrackHistory(self.cfg.history)
        self.bgd_centers: deque = deque(maxlen=self.cfg.bgd_std_window)
        self.prev_box: BoundingBox | None = None
        self.prev_output: BoundingBox | None = None
        self.prev_gray: np.ndarray | None = None
        self.color = False
        self.streak = 0
        self.frame_index = 0

    def init(self, frame: Frame, box: BoundingBox) -> BoundingBox:
        template = self.app.init(frame, box)
        self.bank = ModelBank.start(template)
        self.color = frame.is_color and self.cfg.use_color
        self.prev_box = box
        self.prev_output = box
        self.prev_gray = frame.gray
        self.frame_index = frame.index
        score = self.app.similarities((template,), frame, box)[0]
        self.hist.push(box, score, box_color_mean(frame, box) if self.color else None)
        return box

    # ---------------------------------------------------------------------

    def step(self, frame: Frame) -> tuple[BoundingBox, FrameLog]:
        if self.bank is None:
            raise RuntimeError("tracker not initialized")
        if self.cfg.baseline_only:
            box = self.app.track(frame)
            self.bank.latest = self.app.template
            self._advance(frame, box)
            self.prev_output = box
            return box, FrameLog(frame.index, box, mu=self.app.p.mu, updated=True)
        try:
            return self._full_step(frame)
        except Exception:
            log.exception("frame %d: fusion pipeline failed, using appearance proposal only", frame.index)
            box = self.app.track(frame)
            self.bank.latest = self.app.template
            self._advance(frame, box)
            self.prev_output = box
            return box, FrameLog(frame.index, box, mu=self.app.p.mu, updated=True, source="app-fallback")

    def _advance(self, frame: Frame, box: BoundingBox, score: float | None = None,
                 color: np.ndarray | None = None) -> None:
        self.hist.push(box, score, color)
        self.prev_box = box
        self.prev_gray = frame.gray
        self.frame_index = frame.index

    def _trajectory_box(self) -> BoundingBox | None:
        if not self.cfg.use_trajectory:
            return None
        try:
            return predict_box(self.hist, self.cfg.size_clamp)
        except Exception:
            log.exception("trajectory prediction failed")
            return None

    def _background_box(self, frame: Frame) -> BoundingBox | None:
        if not self.cfg.use_bgmotion:
            return None
        cfg, prev = self.cfg, self.prev_box
        try:
            motion = estimate_motion(self.prev_gray, frame.gray, exclude=prev,
                                     max_points=cfg.max_points, max_dim=cfg.motion_max_dim,
                                     window=cfg.match_window, search=cfg.match_search, reject_px=cfg.reject_px)
            found = propose_box_from_residual(motion.residual, prev.scaled(motion.scale), cfg.cut,
                                              cfg.residual_search, cfg.residual_floor)
        except Exception:
            log.exception("background motion failed")
            return None
        if found is None:
            return None
        s = motion.scale
        cx, cy = found.box.cx / s, found.box.cy / s
        raw = (found.size[0] / s, found.size[1] / s)
        size = filter_size_estimate(raw, self.hist, cfg.size_n_std, cfg.max_aspect_change, cfg.size_std_floor)
        if size is None:
            size = predict_size(self.hist, cfg.size_clamp) if cfg.use_trajectory else (prev.w, prev.h)
        return BoundingBox.from_center(cx, cy, size[0], size[1])

    def _score(self, templates, frame: Frame, box: BoundingBox) -> list[float]:
        return self.app.similarities(templates, frame, box)

    def _full_step(self, frame: Frame) -> tuple[BoundingBox, FrameLog]:
        cfg, prev = self.cfg, self.prev_box
        b_app = self.app.propose(frame).box
        b_trj = self._trajectory_box()
        b_bgd = self._background_box(frame)
        proposals = (b_app, b_trj, b_bgd)
        if b_bgd is not None:
            self.bgd_centers.append(b_bgd.center)

        scores = similarity_scores(self._score, self.bank, proposals, frame)
        flags = assess_quality(scores, proposals, prev, self.bgd_centers, self.fp)
        sim = scores.max(axis=0)
        color = box_color_mean(frame, b_app) if self.color else None
        occluded = False
        if flags.case_id == 0:
            occluded = detect_occlusion(self.hist, sim[0], color, self.fp, self.color)
        dec = fuse(flags, proposals, prev, occluded, sim, self.streak, self.fp)
        state = dec.state_box.clamp_to(frame.width, frame.height)
        # an occluded frame repeats the last reported box, not the internal state
        box = self.prev_output if dec.occluded else dec.box.clamp_to(frame.width, frame.height)

        updated = False
        if dec.update_model:
            old_sc = self.app.sc
            self.app.set_state(state)
            moved = center_error(state, prev) >= cfg.min_motion_px
            rescaled = abs(self.app.sc / old_sc - 1.0) > 1e-9
            if moved or rescaled:
                self.bank.latest = self.app.update(frame, mu=dec.mu_selected)
                updated = True
        if agree(proposals, self.fp):
            self.bank.refresh_anchor()
        self.streak = 0 if dec.source == "app+trj+bgd" else self.streak + 1

        if dec.occluded:
            self._advance(frame, state)
        else:
            self._advance(frame, state, float(sim[0]),
                          box_color_mean(frame, state) if self.color else None)
        self.prev_output = box
        entry = FrameLog(frame.index, box, flags.as_tuple(), dec.case_id, dec.mu_selected, updated,
                         dec.occluded, dec.source, proposals, scores)
        log.debug("frame %d flags=%s case=%d mu=%g update=%s occ=%s src=%s app=%s trj=%s bgd=%s",
                  frame.index, entry.flags, dec.case_id, dec.mu_selected, updated, dec.occluded,
                  dec.source, b_app.as_tuple(), b_trj and b_trj.as_tuple(), b_bgd and b_bgd.as_tuple())
        return box, entry


def track_frames(frames, init_box: BoundingBox, config: Config | None = None,
                 cn_table: np.ndarray | None = None, logs: list | None = None) -> list[BoundingBox]:
    """Track through an iterable of frames; the first output is ``init_box``."""
    tracker = Tracker(config, cn_table)
    out = []
    for i, frame in enumerate(frames):
        if i == 0:
            out.append(tracker.init(frame, init_box))
            continue
        box, entry = tracker.step(frame)
        out.append(box)
        if logs is not None:
            logs.append(entry)
    return out
