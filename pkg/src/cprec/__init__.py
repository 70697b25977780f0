"""Context-aware rating prediction with conformal intervals."""

__version__ = "0.1.0"
