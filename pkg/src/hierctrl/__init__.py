"""Hierarchic low-regret control of weakly degenerate parabolic equations."""

__version__ = "0.1.0"
