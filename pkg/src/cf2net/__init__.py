"""cf2net - coarse-to-fine fusion network for breast ultrasound lesion segmentation."""

__version__ = "0.1.0"
