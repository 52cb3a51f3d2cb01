"""lbpforge: automatic discovery of LBP-style texture equations for video segmentation."""

__version__ = "0.1.0"
