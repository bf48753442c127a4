"""Adversarial patch pairs against local feature extractors.

Library layout mirrors the pipeline: `geometry` (homographies),
`imagecore` (rasters and warping), `spnet` (the CNN extractor and its input
gradient), `classical` (DoG transfer target), `patchgen` (gradient-ascent
patches), `maskgen` (patch placement), `matchransac` (matching + robust
estimation), `bench`/`report` (evaluation harness), `cli` (command line).
"""

from .geometry import Homography, Point2, Quad
from .imagecore import GrayImage, ImageBuffer
from .maskgen import MaskPair
from .matchransac import MatchSet, RansacResult
from .spnet import AttackObjective, Keypoint, NetworkOutput, WeightSet

__all__ = [
    "AttackObjective",
    "GrayImage",
    "Homography",
    "ImageBuffer",
    "Keypoint",
    "MaskPair",
    "MatchSet",
    "NetworkOutput",
    "Point2",
    "Quad",
    "RansacResult",
    "WeightSet",
]

__version__ = "0.1.0"
