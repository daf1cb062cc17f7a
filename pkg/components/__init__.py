"""
Components package for the one-bit MIMO-OFDM detection toolkit

This package contains all the modular components of the simulator:
- Numerical kernels and data models
- Channel and OFDM transmission models
- Detection algorithms (EM variants, ZF, 1BOX)
- Monte-Carlo experiment harness and configuration
"""

__version__ = '0.1.0'
