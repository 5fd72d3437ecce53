"""Smooth cost and constraint terms over a flattened variable sequence.

Every term works on the row-major flattening of a ``T x d`` sequence, so a
term of ``size`` n expects vectors of length ``n = T * d``. Costs return a
value, a gradient and a symmetric positive-semidefinite curvature matrix
(exact for quadratics, Gauss-Newton otherwise). Constraints return values
and a Jacobian; their second-order terms are dropped, which is the
Gauss-Newton convention used by the solver.
"""

from __future__ import annotations

from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import sparse


@runtime_checkable
class Cost(Protocol):
    size: int

    def value(self, z: np.ndarray) -> float: ...

    def derivatives(self, z: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]: ...


@runtime_checkable
class Constraint(Protocol):
    size: int
    dim: int

    def value(self, z: np.ndarray) -> np.ndarray: ...

    def derivatives(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class QuadraticCost:
    """``0.5 z'Hz + f'z + c``."""

    def __init__(self, hessian, linear=None, constant: float = 0.0):
        H = np.asarray(hessian, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"hessian must be square, got shape {H.shape}")
        self.hessian = 0.5 * (H + H.T)
        self.size = H.shape[0]
        self.linear = np.zeros(self.size) if linear is None else np.asarray(linear, dtype=float)
        if self.linear.shape != (self.size,):
            raise ValueError("linear term does not match hessian size")
        self.constant = float(constant)

    def value(self, z):
        Hz = self.hessian @ z
        return float(0.5 * z @ Hz + self.linear @ z + self.constant)

    def derivatives(self, z):
        Hz = self.hessian @ z
        val = float(0.5 * z @ Hz + self.linear @ z + self.constant)
        return val, Hz + self.linear, self.hessian


class LeastSquaresCost:
    """Sum of squared residuals with Gauss-Newton curvature.

    Subclasses implement :meth:`residuals` and :meth:`residual_jacobian`.
    """

    size: int

    def residuals(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual_jacobian(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def value(self, z):
        r = self.residuals(z)
        return float(r @ r)

    def derivatives(self, z):
        r, J = self.residual_jacobian(z)
        return float(r @ r), 2.0 * (J.T @ r), 2.0 * (J.T @ J)


class SumCost:
    def __init__(self, terms: Sequence[Cost]):
        if not terms:
            raise ValueError("SumCost needs at least one term")
        sizes = {t.size for t in terms}
        if len(sizes) != 1:
            raise ValueError(f"terms have mismatched sizes {sorted(sizes)}")
        self.terms = tuple(terms)
        self.size = sizes.pop()

    def value(self, z):
        return float(sum(t.value(z) for t in self.terms))

    def derivatives(self, z):
        val, grad, hess = self.terms[0].derivatives(z)
        grad = np.array(grad, dtype=float)
        hess = np.array(hess, dtype=float)
        for t in self.terms[1:]:
            v, g, h = t.derivatives(z)
            val += v
            grad += g
            hess += h
        return float(val), grad, hess


class HingePenalty:
    """``w * sum(max(0, g)^2)`` for a constraint ``g``; turns hard rows soft."""

    def __init__(self, constraint: Constraint, weight: float):
        if weight <= 0:
            raise ValueError("penalty weight must be positive")
        self.constraint = constraint
        self.weight = float(weight)
        self.size = constraint.size

    def value(self, z):
        g = np.maximum(self.constraint.value(z), 0.0)
        return float(self.weight * (g @ g))

    def derivatives(self, z):
        g, J = self.constraint.derivatives(z)
        active = g > 0
        gp = np.where(active, g, 0.0)
        grad = 2.0 * self.weight * np.asarray(J.T @ gp).ravel()
        Ja = J[active]
        hess = 2.0 * self.weight * _gram(Ja)
        return float(self.weight * (gp @ gp)), grad, hess


class LinearConstraint:
    """``A z - b``; ``A`` may be dense or scipy-sparse."""

    def __init__(self, A, b):
        if sparse.issparse(A):
            self.A = sparse.csr_matrix(A, dtype=float)
        else:
            self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).ravel()
        self.dim, self.size = self.A.shape
        if self.b.shape != (self.dim,):
            raise ValueError(f"b has shape {self.b.shape}, expected ({self.dim},)")

    @classmethod
    def empty(cls, size: int) -> "LinearConstraint":
        return cls(np.zeros((0, size)), np.zeros(0))

    def value(self, z):
        return np.asarray(self.A @ z).ravel() - self.b

    def derivatives(self, z):
        return self.value(z), self.A


class StackedConstraint:
    """Row-wise concatenation of constraints over the same variables."""

    def __init__(self, parts: Sequence[Constraint], size: int):
        for p in parts:
            if p.size != size:
                raise ValueError("constraint part has mismatched size")
        self.parts = tuple(parts)
        self.size = size
        self.dim = sum(p.dim for p in parts)

    def value(self, z):
        if not self.parts:
            return np.zeros(0)
        return np.concatenate([p.value(z) for p in self.parts])

    def derivatives(self, z):
        if not self.parts:
            return np.zeros(0), np.zeros((0, self.size))
        vals, jacs = zip(*(p.derivatives(z) for p in self.parts))
        if any(sparse.issparse(J) for J in jacs):
            J = sparse.vstack(jacs, format="csr")
        else:
            J = np.vstack(jacs)
        return np.concatenate(vals), J


def _gram(J, weights=None) -> np.ndarray:
    """Dense ``J' diag(w) J`` for dense or sparse ``J``."""
    if sparse.issparse(J):
        Jw = J if weights is None else sparse.diags(weights) @ J
        return np.asarray((J.T @ Jw).toarray())
    J = np.asarray(J)
    Jw = J if weights is None else J * weights[:, None]
    return J.T @ Jw
