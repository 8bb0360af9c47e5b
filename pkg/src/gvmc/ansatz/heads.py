"""Complex RBM heads applied to the shared features.

log h(z) = c + sum_a logcosh(b_a + W_a . z), all head parameters complex,
features real.
"""

from __future__ import annotations

import numpy as np

__all__ = ["HeadParams", "log_cosh", "head_forward", "head_feature_cotangent"]


class HeadParams:
    def __init__(self, w: np.ndarray, b: np.ndarray, c: complex):
        self.w = w  # (hidden, F)
        self.b = b  # (hidden,)
        self.c = complex(c)


def log_cosh(x: np.ndarray) -> np.ndarray:
    """Stable complex log(cosh(x)) branch: exact up to multiples of 2*pi*i,
    which cancel in amplitude ratios and derivatives."""
    x = np.asarray(x, dtype=np.complex128)
    flip = x.real < 0
    xs = np.where(flip, -x, x)
    return xs + np.log1p(np.exp(-2.0 * xs)) - np.log(2.0)


def head_forward(hp: HeadParams, z: np.ndarray):
    """z (B, F) real -> (log amplitudes (B,), tanh of preactivations (B, hidden))."""
    pre = z @ hp.w.T + hp.b
    log_amp = hp.c + log_cosh(pre).sum(axis=1)
    return log_amp, np.tanh(pre)


def head_feature_cotangent(hp: HeadParams, tanh_pre: np.ndarray) -> np.ndarray:
    """d(log h)/dz as a (B, F) complex array."""
    return tanh_pre @ hp.w
