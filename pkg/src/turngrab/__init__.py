"""Turn-grabbing intention detection trained with positive-unlabeled learning."""

__version__ = "0.1.0"
