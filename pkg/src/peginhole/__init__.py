"""Coarse-to-fine peg-in-hole assembly from point clouds.

Keypoint voting on a full scene cloud gives a coarse hole pose; an offset
network on a crop around the peg tip then servos the end effector in.
"""

__version__ = "0.1.0"
