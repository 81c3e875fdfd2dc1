"""Parameter-aware OFDM channel estimation: simulation, classical estimators and HyperCEUNet."""

__version__ = "0.1.0"
