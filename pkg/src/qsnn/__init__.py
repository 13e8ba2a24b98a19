"""Spiking Q-networks: ReLU-to-SNN conversion for a miniature Breakout agent."""

__version__ = "0.1.0"
