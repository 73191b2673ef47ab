"""Measurement toolkit for IPv6 prefix rotation and EUI-64 CPE tracking."""

__version__ = "0.1.0"
