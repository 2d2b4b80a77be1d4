"""Multi-scale uncertainty measures for deep-ensemble lesion segmentation and their evaluation."""

__version__ = "0.1.0"
