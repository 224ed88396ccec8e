"""Overflow-safe scalar primitives used throughout the package.

Exponent arguments are clipped at +-500 inside these helpers only; all other
code works with algebraically stable forms built on top of them.
"""
from __future__ import annotations

import numpy as np

_EXP_CLIP = 500.0


def sigmoid(x):
    """Logistic function 1 / (1 + exp(-x)), safe for arbitrarily large |x|."""
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_EXP_CLIP, _EXP_CLIP)))


def log1pexp(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)
