"""Deadline-bounded approximate processing for fan-out services, with a synopsis layer and a latency simulator."""

__version__ = "0.1.0"
