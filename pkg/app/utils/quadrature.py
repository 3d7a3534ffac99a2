"""
Composite Gauss-Legendre rules on intervals.
"""

from typing import Tuple

import numpy as np


def gauss_legendre(order: int, lower: float = 0.0, upper: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Single Gauss-Legendre panel mapped to [lower, upper]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (upper - lower)
    return lower + half * (nodes + 1.0), half * weights


def composite_gauss_legendre(
    order: int,
    panels: int,
    lower: float = 0.0,
    upper: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Composite rule with equal panels, each carrying an order-point Gauss rule.

    Returns:
        (nodes, weights) in increasing node order
    """
    edges = np.linspace(lower, upper, panels + 1)
    nodes, weights = [], []
    for left, right in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(order, left, right)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)
