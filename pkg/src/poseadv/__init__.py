"""Pose-robust adversarial textures for person detectors, at desk scale."""

__version__ = "0.1.0"
