"""Radar perception on bird's-eye-view intensity maps.

Detection with temporal-relation attention across frame windows, per-object
pseudo-direction estimation, and motion-consistency multi-object tracking,
all on a small float64 autodiff engine with synthetic scenario tooling.
"""

__version__ = "0.1.0"
