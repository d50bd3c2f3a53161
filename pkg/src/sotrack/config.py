"""Tracker configuration: defaults, range checks and a flat ``key = value`` file format.

Lines look like ``sim_thresh = 0.08``; ``#`` starts a comment. Booleans accept
true/false/yes/no/on/off/1/0. Unknown keys are ignored with a warning.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .dcf import DCFParams
from .fusion import FusionParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Config:
    # modules
    use_bgmotion: bool = True
    use_trajectory: bool = True
    use_color: bool = True
    # appearance model
    cell_size: int = 4
    padding: float = 5.0
    num_scales: int = 5
    scale_step: float = 1.02
    scale_damping: float = 0.995
    admm_iterations: int = 2
    mu: float = 15.0
    min_motion_px: float = 1.0
    # background motion
    max_points: int = 50
    match_window: int = 21
    match_search: int = 20
    reject_px: float = 3.0
    motion_max_dim: int = 480
    cut: float = 0.1
    residual_search: float = 2.0
    residual_floor: float = 1.0
    # trajectory
    history: int = 20
    size_clamp: float = 0.2
    size_n_std: float = 3.0
    size_std_floor: float = 1.0
    max_aspect_change: float = 0.25
    # fusion
    sim_thresh: float = 0.08
    iou_thresh: float = 0.5
    robustness_px: float = 30.0
    bgd_std_px: float = 30.0
    bgd_std_window: int = 10
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

    def __post_init__(self):
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and lo <= v <= hi):
                raise ValueError(f"config {name}={v!r} outside [{lo}, {hi}]")
        if self.match_window % 2 == 0:
            raise ValueError("match_window must be odd")

    @property
    def baseline_only(self) -> bool:
        return not (self.use_bgmotion or self.use_trajectory)

    @property
    def mu_set(self) -> tuple[float, ...]:
        return (self.mu_alone, self.mu_merge, self.mu_override, self.mu_catch_up)

    def dcf_params(self) -> DCFParams:
        return DCFParams(cell_size=self.cell_size, padding=self.padding, mu=self.mu,
                         admm_iterations=self.admm_iterations, num_scales=self.num_scales,
                         scale_step=self.scale_step, scale_damping=self.scale_damping,
                         use_color=self.use_color)

    def fusion_params(self) -> FusionParams:
        return FusionParams(
            sim_thresh=self.sim_thresh, robust_px=self.robustness_px, bgd_std_px=self.bgd_std_px,
            bgd_std_window=self.bgd_std_window, iou_thresh=self.iou_thresh, mu_alone=self.mu_alone,
            mu_merge=self.mu_merge, mu_override=self.mu_override, mu_catch_up=self.mu_catch_up,
            catch_up_streak=self.catch_up_streak, occ_score_ratio=self.occ_score_ratio,
            occ_color_delta=self.occ_color_delta, occ_window=self.occ_window,
            agree_px=self.agree_px, agree_iou=self.agree_iou)

    def with_overrides(self, **kw) -> "Config":
        return replace(self, **kw)


_RANGES = {
    "cell_size": (1, 64), "padding": (1.0, 20.0), "num_scales": (1, 33), "scale_step": (1.0, 2.0),
    "scale_damping": (0.0, 1.0), "admm_iterations": (1, 1000), "mu": (0.0, 1e9),
    "min_motion_px": (0.0, 1e3), "max_points": (3, 10000), "match_window": (3, 101),
    "match_search": (1, 200), "reject_px": (0.0, 1e3), "motion_max_dim": (16, 100000),
    "cut": (1e-9, 1.0 - 1e-9), "residual_search": (1.0, 10.0), "residual_floor": (0.0, 255.0),
    "history": (2, 1000), "size_clamp": (0.0, 1.0), "size_n_std": (0.0, 100.0),
    "size_std_floor": (0.0, 1e3), "max_aspect_change": (0.0, 10.0), "sim_thresh": (0.0, 1.0),
    "iou_thresh": (0.0, 1.0), "robustness_px": (0.0, 1e4), "bgd_std_px": (0.0, 1e4),
    "bgd_std_window": (2, 1000), "mu_alone": (0.0, 1e9), "mu_merge": (0.0, 1e9),
    "mu_override": (0.0, 1e9), "mu_catch_up": (0.0, 1e9), "catch_up_streak": (0, 10000),
    "occ_score_ratio": (0.0, 1.0), "occ_color_delta": (0.0, 255.0), "occ_window": (1, 1000),
    "agree_px": (0.0, 1e4), "agree_iou": (0.0, 1.0),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(kind, text: str, key: str):
    if kind is bool or kind == "bool":
        t = text.lower()
        if t in _TRUE:
            return True
        if t in _FALSE:
            return False
        raise ValueError(f"config {key}: not a boolean: {text!r}")
    try:
        if kind is int or kind == "int":
            return int(text)
        return float(text)
    except ValueError:
        raise ValueError(f"config {key}: bad number {text!r}") from None


def parse_config(text: str, base: Config | None = None) -> Config:
    kinds = {f.name: f.type for f in fields(Config)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            log.warning("config line %d: unknown key %r ignored", lineno, key)
            continue
        values[key] = _convert(kinds[key], val, key)
    return replace(base or Config(), **values)


def load_config(path: str | Path | None, base: Config | None = None) -> Config:
    if path is None:
        return base or Config()
    return parse_config(Path(path).read_text(), base)


def _format(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


def dump_config(cfg: Config) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))
