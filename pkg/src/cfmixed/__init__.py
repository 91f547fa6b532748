"""Asynchronous cell-free massive MIMO-OFDM downlink: mixed coherent and
non-coherent transmission, distance-based AP clustering and rate evaluation."""

__version__ = "0.1.0"
