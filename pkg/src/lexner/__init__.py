"""Fragment-based named entity recognition with a lexicon-memory model."""

__version__ = "0.1.0"
