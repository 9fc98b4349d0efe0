"""koopkit: lifted dynamics models with linear, convex, and encoded-control
transition maps, plus the double-well benchmark used to compare them."""

__version__ = "0.1.0"
