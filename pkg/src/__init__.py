# REDDA Toolkit Source Package

__version__ = "0.3.0"
