"""Linear dilation-erosion regression toolkit."""

__version__ = "0.1.0"
