"""Uplink beamforming in cell-free massive MIMO with SIC, learned by DDPG-family agents."""

__version__ = "0.1.0"
