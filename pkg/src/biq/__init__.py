"""Opinion-unaware, distortion-unaware no-reference image quality assessment."""

__version__ = "0.1.0"
