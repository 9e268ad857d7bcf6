"""Desk-scale multimodal lesion detection: gaze fixation maps fused with
grayscale images in a miniature region-proposal detector, plus the IoBB
evaluation protocol for comparing image-only and multimodal models."""

__version__ = "0.1.0"
