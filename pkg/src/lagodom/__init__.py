"""Fixed-lag smoothing LiDAR odometry with full map regeneration."""

from .geometry import Pose

__version__ = "0.1.0"

__all__ = ["Pose", "__version__"]
