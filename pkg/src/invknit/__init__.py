"""invknit: recover machine-knittable stitch instruction grids from fabric images."""

__version__ = "0.1.0"
