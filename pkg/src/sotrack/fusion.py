"""Proposal scoring, quality flags, occlusion detection and the 8-case fusion table."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox, center_error, iou, min_cover
from .dcf import Template
from .trajectory import TrackHistory

SOURCES = ("app", "trj", "bgd")


@dataclass(frozen=True)
class QualityFlags:
    app: bool
    trj: bool
    bgd: bool

    @property
    def case_id(self) -> int:
        """Flags read as a 3-bit number (app, trj, bgd); 7 means all good."""
        return 4 * int(self.app) + 2 * int(self.trj) + int(self.bgd)

    @classmethod
    def from_case(cls, case_id: int) -> "QualityFlags":
        if not 0 <= case_id <= 7:
            raise ValueError(f"case id out of range: {case_id}")
        return cls(bool(case_id & 4), bool(case_id & 2), bool(case_id & 1))

    def as_tuple(self) -> tuple[int, int, int]:
        return int(self.app), int(self.trj), int(self.bgd)


@dataclass
class ModelBank:
    """Latest template plus an anchor kept from the last three-way agreement."""
    latest: Template
    anchor: Template
    anchor_frame: int

    @classmethod
    def start(cls, template: Template) -> "ModelBank":
        return cls(template, template, template.frame_learned)

    def refresh_anchor(self) -> None:
        self.anchor = self.latest
        self.anchor_frame = self.latest.frame_learned


@dataclass(frozen=True)
class FusionParams:
    sim_thresh: float = 0.08
    robust_px: float = 30.0
    bgd_std_px: float = 30.0
    bgd_std_window: int = 10
    iou_thresh: float = 0.5
    mu_alone: float = 15.0
    mu_merge: float = 10.0
    mu_override: float = 5.0
    mu_catch_up: float = 0.0
    catch_up_streak: int = 3
    occ_score_ratio: float = 0.5
    occ_color_delta: float = 20.0
    occ_window: int = 5
    agree_px: float = 3.0
    agree_iou: float = 0.7


@dataclass
class FusionDecision:
    box: BoundingBox
    case_id: int
    mu_selected: float
    update_model: bool
    occluded: bool
    source: str
    # box fed back into the modules; differs from ``box`` only for merges
    state_box: BoundingBox | None = None

    def __post_init__(self):
        if self.state_box is None:
            self.state_box = self.box


Proposals = tuple  # (B_app, B_trj, B_bgd); B_trj and B_bgd may be None


def similarity_scores(scorer, bank: ModelBank, proposals: Proposals, frame) -> np.ndarray:
    """(2, 3) scores: rows (latest, anchor) templates, columns (app, trj, bgd) proposals.

    ``scorer(templates, frame, box)`` returns one score per template; missing
    or degenerate proposals score 0.
    """
    out = np.zeros((2, 3))
    for j, box in enumerate(proposals):
        if box is None or not box.is_valid() or box.w < 1 or box.h < 1:
            continue
        out[:, j] = scorer((bank.latest, bank.anchor), frame, box)
    return out


def _displacement(box: BoundingBox | None, prev_box: BoundingBox) -> float:
    return math.inf if box is None else center_error(box, prev_box)


def assess_quality(scores: np.ndarray, proposals: Proposals, prev_box: BoundingBox,
                   bgd_centers, params: FusionParams = FusionParams()) -> QualityFlags:
    """Good = similar to either template and robust.

    B_app and B_trj are robust when they stay within ``robust_px`` of the
    previous box; B_bgd when its recent centers (``bgd_centers``, newest last)
    vary by at most ``bgd_std_px`` along both axes.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(2, 3)
    similar = (scores > params.sim_thresh).any(axis=0)
    app = bool(similar[0]) and _displacement(proposals[0], prev_box) <= params.robust_px
    trj = bool(similar[1]) and _displacement(proposals[1], prev_box) <= params.robust_px
    bgd = bool(similar[2]) and proposals[2] is not None
    if bgd:
        recent = np.asarray(list(bgd_centers), dtype=np.float64).reshape(-1, 2)[-params.bgd_std_window:]
        if len(recent) > 1:
            bgd = bool(np.all(recent.std(axis=0) <= params.bgd_std_px))
    return QualityFlags(app, trj, bgd)


def detect_occlusion(hist: TrackHistory, current_score: float, current_color: np.ndarray | None,
                     params: FusionParams = FusionParams(), use_color: bool = True) -> bool:
    """Sudden score drop, confirmed by a jump of the in-box mean color when available."""
    n = params.occ_window
    if len(hist.scores) < n:
        return False
    ref = float(np.mean(list(hist.scores)[-n:]))
    if not current_score < params.occ_score_ratio * ref:
        return False
    if not use_color or current_color is None:
        return True
    if len(hist.color_means) < n:
        return False
    ref_color = np.mean(np.stack(list(hist.color_means)[-n:]), axis=0)
    return float(np.max(np.abs(np.asarray(current_color, float) - ref_color))) > params.occ_color_delta


def all_overlap(boxes, thresh: float) -> bool:
    return all(iou(a, b) >= thresh for a, b in itertools.combinations(boxes, 2))


def mean_box(boxes) -> BoundingBox:
    """Box with the average center and size of ``boxes``."""
    c = np.mean([(b.cx, b.cy, b.w, b.h) for b in boxes], axis=0)
    return BoundingBox.from_center(*(float(v) for v in c))


def agree(proposals: Proposals, params: FusionParams = FusionParams()) -> bool:
    """All three proposals at the same place (refreshes the anchor template)."""
    if any(b is None for b in proposals):
        return False
    return all(center_error(a, b) <= params.agree_px and iou(a, b) >= params.agree_iou
               for a, b in itertools.combinations(proposals, 2))


def fuse(flags: QualityFlags, proposals: Proposals, prev_box: BoundingBox, occluded: bool,
         sim: np.ndarray | None = None, streak: int = 0,
         params: FusionParams = FusionParams()) -> FusionDecision:
    """Apply the rule table to the three proposals.

    ``sim`` holds one similarity per proposal (best over both templates) and
    is used when a lone non-appearance proposal has to beat B_app. ``streak``
    counts preceding frames without a three-way merge; a merge after a long
    streak gets the strongest update.
    """
    p = params
    app, trj, bgd = proposals
    if app is None:
        raise ValueError("B_app is required")
    # a missing proposal can never count as good
    flags = QualityFlags(flags.app, flags.trj and trj is not None, flags.bgd and bgd is not None)
    sim = np.zeros(3) if sim is None else np.asarray(sim, dtype=np.float64)
    case = flags.case_id
    good = [s for s, flag in zip(range(3), flags.as_tuple()) if flag]

    def pick(i: int) -> FusionDecision:
        mu = p.mu_alone if i == 0 else p.mu_override
        return FusionDecision(proposals[i], case, mu, True, False, SOURCES[i])

    def merged(idx) -> FusionDecision:
        box = min_cover([proposals[i] for i in idx])
        if 0 not in idx:
            mu = p.mu_override
        elif len(idx) == 3 and streak >= p.catch_up_streak:
            mu = p.mu_catch_up
        else:
            mu = p.mu_merge
        return FusionDecision(box, case, mu, True, False, "+".join(SOURCES[i] for i in idx),
                              mean_box([proposals[i] for i in idx]))

    def more_robust(i: int, j: int) -> int:
        # smaller displacement wins; ties keep the first (B_app comes first)
        return i if _displacement(proposals[i], prev_box) <= _displacement(proposals[j], prev_box) else j

    if case == 7:
        if all_overlap(proposals, p.iou_thresh):
            return merged((0, 1, 2))
        return pick(0)
    if len(good) == 2:
        i, j = good
        if iou(proposals[i], proposals[j]) >= p.iou_thresh:
            return merged((i, j))
        return pick(more_robust(i, j))
    if len(good) == 1:
        i = good[0]
        if i == 0:
            return pick(0)
        better_sim = sim[i] > sim[0]
        better_robust = _displacement(proposals[i], prev_box) < _displacement(app, prev_box)
        return pick(i if (better_sim or better_robust) else 0)
    if occluded:
        return FusionDecision(prev_box, case, p.mu_alone, False, True, "prev")
    return pick(0)
