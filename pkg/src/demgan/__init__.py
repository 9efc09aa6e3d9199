"""Elevation-from-RGB pipeline: tile curation, conditional GAN training, evaluation."""

__version__ = "0.1.0"
