"""Steering-angle prediction from camera frames on a small numpy autodiff core."""

__version__ = "0.1.0"
