"""SWBCE loss, strict edge evaluation, synthetic data and a toy trainer."""

__version__ = "0.1.0"
