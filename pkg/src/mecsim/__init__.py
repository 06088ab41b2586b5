"""Multi-MEC DASH delivery simulator with a joint cache/transcode/RB optimizer."""

__version__ = "0.1.0"
