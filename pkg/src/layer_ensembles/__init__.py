"""Single-network, single-pass ensembles built from per-block segmentation heads."""

__version__ = "0.1.0"
