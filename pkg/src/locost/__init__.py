"""LOCOST: a state-space encoder-decoder for long-input conditional generation."""

from ._backend import NAME as BACKEND

__version__ = "0.1.0"
