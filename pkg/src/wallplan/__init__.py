"""Mission planning and coordination for heterogeneous robot teams building brick walls."""

from importlib import resources

__version__ = "0.1.0"


def reference_mission_path():
    """Path of the bundled two-UAV, one-UGV reference wall."""
    return resources.files(__name__) / "data" / "reference_wall.json"
