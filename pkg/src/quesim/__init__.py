"""quesim: duplicate question detection with a Siamese GRU and a secondary classifier."""

__version__ = "0.1.0"
