"""Domain-aware individually fair graph recommendation with popularity-bias analysis."""

__version__ = "0.1.0"
