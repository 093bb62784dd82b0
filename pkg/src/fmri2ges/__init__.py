"""fMRI-to-gesture reconstruction via dual brain decoding alignment."""

__version__ = "0.1.0"
