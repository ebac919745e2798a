"""accentlab: accent identification and accentedness assessment toolkit."""

__version__ = "0.1.0"
