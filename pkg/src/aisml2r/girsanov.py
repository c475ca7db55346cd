"""Radon-Nikodym densities for a constant drift shift of Brownian motion."""

import numpy as np


def girsanov_minus(W_T, theta, T):
    """exp(-theta W_T - theta^2 T / 2): reweights a theta-shifted sample."""
    return np.exp(-theta * np.asarray(W_T, dtype=float) - 0.5 * theta * theta * T)


def girsanov_plus(W_T, theta, T):
    """exp(-theta W_T + theta^2 T / 2): appears in the second moment under P."""
    return np.exp(-theta * np.asarray(W_T, dtype=float) + 0.5 * theta * theta * T)
