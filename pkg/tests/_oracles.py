"""Exact-arithmetic reference implementations shared across test modules.

These deliberately avoid numpy float paths: grids are enumerated as integer
compositions and L1 distances are computed with Fraction, so any agreement
with the library is agreement with an independent derivation.
"""

from fractions import Fraction
from itertools import combinations

import numpy as np

from fedsoft import loss_and_grad


def finite_difference_gradient(params, spec, x, targets, step=1e-5):
    flat = params.values
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        up, _ = loss_and_grad(params, spec, x, targets)
        flat[i] = saved - step
        down, _ = loss_and_grad(params, spec, x, targets)
        flat[i] = saved
        grad[i] = (up - down) / (2.0 * step)
    return grad


def grid_rows(total, parts):
    """All integer vectors of the given length summing to total."""
    for cuts in combinations(range(total + parts - 1), parts - 1):
        row = []
        prev = -1
        for cut in cuts:
            row.append(cut - prev - 1)
            prev = cut
        row.append(total + parts - 2 - prev)
        yield row


def exact_l1(p_row, grid, k):
    return sum(abs(Fraction(p) - Fraction(int(g), k)) for p, g in zip(p_row, grid))


def brute_force_min_l1(p_row, b):
    k = 2**b - 1
    return min(exact_l1(p_row, g, k) for g in grid_rows(k, len(p_row)))
