"""Rule-based AASM sleep staging with per-epoch explanation traces."""

__version__ = "0.1.0"
