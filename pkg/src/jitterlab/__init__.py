"""jitterlab: synthetic benchmark and adaptation toolkit for gaze jitter."""

__version__ = "0.1.0"
