"""White-box and black-box evaluation toolkit for fingerprint recognition pipelines."""
__version__ = "0.1.0"
