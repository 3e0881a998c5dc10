"""Universal multilevel lattice codes for compound block-fading channels."""

__version__ = "0.1.0"
