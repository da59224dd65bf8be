"""pointrig: articulated neural point clouds with a learned skeleton.

Extracts a feature point cloud and kinematic tree from a density field,
forward-warps it with linear blend skinning, renders by point-based volume
rendering, and jointly optimizes poses, weights and appearance against
multi-view video. Ships a CLI, an HTTP rendering service and a pose editor.
"""

__version__ = "0.1.0"
