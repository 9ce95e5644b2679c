"""Elastic multi-cloud CDN slice simulator: QoE-driven flavor assignment, scaling and transcoding."""

__version__ = "0.1.0"
