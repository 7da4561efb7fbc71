"""Stereo disparity estimation with multi-level recurrent refinement on a numpy autograd engine."""

__version__ = "0.1.0"
