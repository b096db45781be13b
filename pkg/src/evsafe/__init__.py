"""Safety-constrained EV charging coordination on radial distribution feeders."""

__version__ = "0.1.0"
