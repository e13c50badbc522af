"""latgp - Latency estimation for FPGA-based CNN accelerators."""

__version__ = "0.1.0"
