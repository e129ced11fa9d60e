"""Two-stage tensor estimation of multi-target parameters in RIS-aided bistatic sensing."""
__version__ = "0.1.0"
