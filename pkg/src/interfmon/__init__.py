"""Interference-aware QoS degradation monitoring on synthetic co-location telemetry."""

__version__ = "0.1.0"
