"""Martingale tests for measure changes of one-dimensional diffusions."""

__version__ = "0.1.0"
