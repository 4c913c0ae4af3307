"""twinsec: desk-scale digital-twin security platform for a simulated assembly line."""

__version__ = "0.1.0"
