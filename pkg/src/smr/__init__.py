"""One-step material reconstruction for photon-counting spectral CT."""
__version__ = "0.1.0"
