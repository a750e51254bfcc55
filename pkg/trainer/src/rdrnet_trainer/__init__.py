"""Toy-scale trainer for the micro dual-resolution segmentation variant."""

__version__ = "0.1.0"
