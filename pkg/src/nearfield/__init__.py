"""Near-field (Fresnel-regime) X-ray phase retrieval."""

__version__ = "0.1.0"
