"""Vibration-based milling quality monitoring: synthetic data, spectrogram
features, a tiny INT8 CNN and a latency/energy benchmark harness."""

__version__ = "0.1.0"
