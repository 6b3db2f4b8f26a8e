"""Algorithm discovery by search over chains of computational tokens."""

__version__ = "0.1.0"
