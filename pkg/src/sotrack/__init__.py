"""Unsupervised single-object tracker and OPE benchmark harness."""
from .boxes import BoundingBox
from .config import Config
from .tracker import Tracker, track_frames

__all__ = ["BoundingBox", "Config", "Tracker", "track_frames"]
__version__ = "0.1.0"
