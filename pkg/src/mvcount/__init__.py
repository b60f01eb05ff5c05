"""Multi-view crowd counting with attention-based feature lifting into a voxel volume."""

__version__ = "0.1.0"
