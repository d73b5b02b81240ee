"""Independent reference values used by several test modules."""

import math

import numpy as np
from numpy.polynomial import polynomial as P


def _geometric(lam, power, n):
    return np.array([math.comb(j + power - 1, j) / lam**j for j in range(n + 1)])


def exponential_moment(lams, n, marked=None):
    """E[X_a S^n] (or E[S^n]) for independent X_k ~ Exp(mean 1/lam_k), S = sum X_k.

    Read off the generating function prod_k (1 - u/lam_k)^{-1}, with the marked
    factor squared and divided by lam_a.
    """
    out = np.zeros(n + 1)
    out[0] = 1.0
    for j, lam in enumerate(lams):
        out = P.polymul(out, _geometric(lam, 2 if j == marked else 1, n))[: n + 1]
    if marked is not None:
        out = out / lams[marked]
    return math.factorial(n) * out[n]


def constant_potential_coefficient(lams, c, m, observable="empty", diag=None):
    """Classical coefficient (-1)^m/m! E[Theta W^m] in d = 1 with w = c, so W = (c/2) S^2."""
    pref = (-1) ** m / math.factorial(m) * (c / 2) ** m
    if observable == "empty":
        return pref * exponential_moment(lams, 2 * m)
    if observable == "identity":
        return pref * exponential_moment(lams, 2 * m + 1)
    return pref * sum(diag[a] * exponential_moment(lams, 2 * m, marked=a) for a in range(len(lams)) if diag[a] != 0)
