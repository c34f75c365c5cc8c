"""Wrist-IMU step counting with an LSTM left/right step classifier."""

__version__ = "0.1.0"
