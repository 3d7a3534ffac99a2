"""
Coefficient expression table and registry for the sine-basis model.

Every coefficient is a sum of separable terms coef·f(x₁)·g(x₂) with f, g taken
from a fixed table of one-dimensional expressions and their derivatives.
"""

from typing import Callable, Dict, List, Tuple

import numpy as np

from app.models.schemas import CoefficientTerm, ModelCoefficients
from app.utils.errors import CoefficientError

Expression = Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]

PI = np.pi

# name -> (f, f')
EXPRESSIONS: Dict[str, Expression] = {
    "1": (lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "x": (lambda x: x, lambda x: np.ones_like(x)),
    "x^2": (lambda x: x ** 2, lambda x: 2.0 * x),
    "x(1-x)": (lambda x: x * (1.0 - x), lambda x: 1.0 - 2.0 * x),
    "sin(pi x)": (lambda x: np.sin(PI * x), lambda x: PI * np.cos(PI * x)),
    "cos(pi x)": (lambda x: np.cos(PI * x), lambda x: -PI * np.sin(PI * x)),
    "sin^2(pi x)": (lambda x: np.sin(PI * x) ** 2, lambda x: PI * np.sin(2.0 * PI * x)),
    "sin(2 pi x)": (lambda x: np.sin(2.0 * PI * x), lambda x: 2.0 * PI * np.cos(2.0 * PI * x)),
}


def _terms(items: List[Tuple[float, str, str]]) -> List[CoefficientTerm]:
    return [CoefficientTerm(coef=coef, fx=fx, fy=fy) for coef, fx, fy in items]


_DEFAULT_B1 = [(1.0, "x(1-x)", "x(1-x)")]
_DEFAULT_B2 = [(-0.5, "sin(pi x)", "sin(pi x)")]
_DEFAULT_C = [(1.0, "1", "1"), (1.0, "x", "x")]

REGISTRY: Dict[str, Dict[str, List[Tuple[float, str, str]]]] = {
    "default": {"b1": _DEFAULT_B1, "b2": _DEFAULT_B2, "c": _DEFAULT_C},
    "weak_default": {
        "b1": [(0.25 * coef, fx, fy) for coef, fx, fy in _DEFAULT_B1],
        "b2": [(0.25 * coef, fx, fy) for coef, fx, fy in _DEFAULT_B2],
        "c": _DEFAULT_C,
    },
    "self_adjoint": {"b1": [], "b2": [], "c": []},
    "potential": {"b1": [], "b2": [], "c": [(1.0, "1", "1")]},
    # b = (∂₂ψ, −∂₁ψ) with stream function ψ = sin²(πx₁)sin²(πx₂): divergence free
    "swirl": {
        "b1": [(PI, "sin^2(pi x)", "sin(2 pi x)")],
        "b2": [(-PI, "sin(2 pi x)", "sin^2(pi x)")],
        "c": [],
    },
}


def get_coefficients(name: str, quadrature_order: int = 40) -> ModelCoefficients:
    """
    Look up a named coefficient set.

    Raises:
        CoefficientError: If the name is not registered
    """
    if name not in REGISTRY:
        raise CoefficientError(f"Unknown coefficient set '{name}'", available=sorted(REGISTRY))
    entry = REGISTRY[name]
    return ModelCoefficients(
        name=name,
        b1=_terms(entry["b1"]),
        b2=_terms(entry["b2"]),
        c=_terms(entry["c"]),
        quadrature_order=quadrature_order,
    )


def expression(name: str) -> Expression:
    """(f, f') for a table entry."""
    if name not in EXPRESSIONS:
        raise CoefficientError(f"Unknown expression '{name}'", available=sorted(EXPRESSIONS))
    return EXPRESSIONS[name]


def evaluate(terms: List[CoefficientTerm], x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Pointwise value of a sum of separable terms."""
    total = np.zeros(np.broadcast(x1, x2).shape)
    for term in terms:
        total = total + term.coef * expression(term.fx)[0](x1) * expression(term.fy)[0](x2)
    return total


def divergence(coeffs: ModelCoefficients, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """∇·b evaluated pointwise."""
    total = np.zeros(np.broadcast(x1, x2).shape)
    for term in coeffs.b1:
        total = total + term.coef * expression(term.fx)[1](x1) * expression(term.fy)[0](x2)
    for term in coeffs.b2:
        total = total + term.coef * expression(term.fx)[0](x1) * expression(term.fy)[1](x2)
    return total


def check_boundary(coeffs: ModelCoefficients, samples: int = 65, tol: float = 1e-12) -> None:
    """
    Require b = 0 on the boundary of the unit square.

    Raises:
        CoefficientError: With the largest boundary value found
    """
    t = np.linspace(0.0, 1.0, samples)
    zeros, ones = np.zeros_like(t), np.ones_like(t)
    edges = [(zeros, t), (ones, t), (t, zeros), (t, ones)]
    largest = 0.0
    for terms in (coeffs.b1, coeffs.b2):
        if not terms:
            continue
        for x1, x2 in edges:
            largest = max(largest, float(np.max(np.abs(evaluate(terms, x1, x2)))))
    if largest > tol:
        raise CoefficientError("Advection field must vanish on the boundary", max_boundary_value=largest)
