"""harmonytk: composite-image dataset synthesis, evaluation, and pairwise ranking."""

__version__ = "0.1.0"
