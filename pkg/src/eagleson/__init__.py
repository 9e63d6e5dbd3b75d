"""Change-of-measure limit theorem checks for non-stationary processes."""

__version__ = "0.1.0"
