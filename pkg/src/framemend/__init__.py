"""framemend: online single-step video enhancement on synthetic paired data."""

__version__ = "0.1.0"
