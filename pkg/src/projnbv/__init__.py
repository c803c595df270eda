"""Next-best-view planning by projecting ellipsoid proxies of a voxel map."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .geometry import CameraModel, Ellipsoid, ViewPose
from .planner import MeshError, Planner, bench, run

__all__ = ["CameraModel", "ConfigError", "Ellipsoid", "MeshError", "Planner", "RunConfig",
           "ViewPose", "bench", "load_config", "parse_config", "run"]
