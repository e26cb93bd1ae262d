"""cloudviz: offline PNG rendering of foldtear CLI output files."""

__version__ = "0.1.0"
