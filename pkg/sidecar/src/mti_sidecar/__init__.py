"""Sidecar that turns speech SSL representations into MTIE embedding files."""

__version__ = "0.1.0"
