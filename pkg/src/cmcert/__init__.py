"""Interval certification of the center manifold around L1 of the planar RTBP."""

__version__ = "0.1.0"

from .interval import Interval  # noqa: E402
from .config import RunConfig, preset  # noqa: E402

__all__ = ["Interval", "RunConfig", "preset", "__version__"]
