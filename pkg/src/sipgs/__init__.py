"""Sequence-conditioned plant growth frame synthesis.

A CVAE/GAN hybrid whose decoder is conditioned on an LSTM embedding of the
environmental sensor history, built on a small reverse-mode autodiff core
over numpy (hot convolution kernels in Cython, with a numpy fallback).
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
