"""Desk-scale adversarial attack toolkit driven by deep perceptual similarity."""

__version__ = "0.1.0"
