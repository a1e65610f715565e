"""Multi-modal video classification: visual, audio and text features fused per label."""

__version__ = "0.1.0"
