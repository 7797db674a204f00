# aad-evalkit source modules

__version__ = "0.1.0"
