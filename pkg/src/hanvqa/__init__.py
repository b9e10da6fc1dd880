"""Desk-scale attention supervision for visual question answering.

The package trains a network that predicts where to look for a given
question over a grid of visual features, uses it to produce reference
attention maps at dataset scale, and measures whether supervising an
answering model with those maps yields more accurate attention and
better answers.
"""

__version__ = "0.1.0"

from . import answerer, attention, data, diffcore, encoders, fileio, metrics

__all__ = [
    "answerer",
    "attention",
    "data",
    "diffcore",
    "encoders",
    "fileio",
    "metrics",
    "__version__",
]
