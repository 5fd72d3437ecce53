"""Per-branch distributed augmented Lagrangian.

For branch ``s`` with trunk difference ``dz = z[:L] - z_consensus``::

    L_s = p(s) c_s(z)
        + lam' g(z) + mu * sum_{i active} g_i(z)^2
        + kappa' h(z) + nu * |h(z)|^2
        + eta' dz + rho/2 * |dz|^2

Inequality row ``i`` is active when ``g_i > 0`` or ``lam_i > 0``; with
``literal_indicator`` only ``g_i > 0`` counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..terms import _gram
from ..tree import BranchProblem
from .config import SolverConfig


@dataclass
class DualState:
    lam: np.ndarray
    kappa: np.ndarray
    eta: np.ndarray

    @classmethod
    def zeros(cls, branch: BranchProblem, trunk_steps: int) -> "DualState":
        return cls(
            np.zeros(branch.ineq.dim),
            np.zeros(branch.eq.dim),
            np.zeros((trunk_steps, branch.dim)),
        )

    def copy(self) -> "DualState":
        return DualState(self.lam.copy(), self.kappa.copy(), self.eta.copy())


class BranchLagrangian:
    """The branch Lagrangian with consensus and duals frozen, as a function of ``z``.

    ``z`` is the flattened ``T x d`` branch sequence.
    """

    def __init__(self, branch: BranchProblem, consensus: np.ndarray, duals: DualState,
                 cfg: SolverConfig):
        self.branch = branch
        self.cfg = cfg
        self.p = branch.cost_weight
        self.z_cons = np.asarray(consensus, dtype=float).ravel()
        self.n_trunk = self.z_cons.size
        self.lam = duals.lam
        self.kappa = duals.kappa
        self.eta = duals.eta.ravel()
        if self.lam.shape != (branch.ineq.dim,) or self.kappa.shape != (branch.eq.dim,):
            raise ValueError("dual shapes do not match the branch constraints")
        if self.eta.size != self.n_trunk or self.n_trunk > branch.size:
            raise ValueError("consensus shape does not match the branch trunk")
        self.evaluations = 0

    def _active(self, g):
        if self.cfg.literal_indicator:
            return g > 0
        return (g > 0) | (self.lam > 0)

    def value(self, z: np.ndarray) -> float:
        self.evaluations += 1
        cfg = self.cfg
        val = self.p * self.branch.cost.value(z)
        if self.lam.size:
            g = self.branch.ineq.value(z)
            ga = np.where(self._active(g), g, 0.0)
            val += self.lam @ g + cfg.mu * (ga @ ga)
        if self.kappa.size:
            h = self.branch.eq.value(z)
            val += self.kappa @ h + cfg.nu * (h @ h)
        if self.n_trunk:
            dz = z[: self.n_trunk] - self.z_cons
            val += self.eta @ dz + 0.5 * cfg.rho * (dz @ dz)
        return float(val)

    def derivatives(self, z: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        self.evaluations += 1
        cfg = self.cfg
        c, gc, Hc = self.branch.cost.derivatives(z)
        val = self.p * c
        grad = self.p * np.asarray(gc, dtype=float)
        hess = self.p * np.asarray(Hc, dtype=float)  # fresh array, safe to update in place
        if self.lam.size:
            g, Jg = self.branch.ineq.derivatives(z)
            act = self._active(g)
            ga = np.where(act, g, 0.0)
            val += self.lam @ g + cfg.mu * (ga @ ga)
            grad += np.asarray(Jg.T @ (self.lam + 2.0 * cfg.mu * ga)).ravel()
            if act.any():
                hess += 2.0 * cfg.mu * _gram(Jg[act])
        if self.kappa.size:
            h, Jh = self.branch.eq.derivatives(z)
            val += self.kappa @ h + cfg.nu * (h @ h)
            grad += np.asarray(Jh.T @ (self.kappa + 2.0 * cfg.nu * h)).ravel()
            hess += 2.0 * cfg.nu * _gram(Jh)
        if self.n_trunk:
            m = self.n_trunk
            dz = z[:m] - self.z_cons
            val += self.eta @ dz + 0.5 * cfg.rho * (dz @ dz)
            grad[:m] += self.eta + cfg.rho * dz
            hess.flat[: m * (hess.shape[0] + 1) : hess.shape[0] + 1] += cfg.rho
        return float(val), grad, hess


def branch_lagrangian(branch: BranchProblem, z, consensus, duals: DualState,
                      cfg: SolverConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, ``T x d`` gradient and PSD curvature of the branch Lagrangian."""
    z = np.asarray(z, dtype=float)
    val, grad, hess = BranchLagrangian(branch, consensus, duals, cfg).derivatives(z.ravel())
    if not np.isfinite(val) or not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite branch Lagrangian")
    return val, grad.reshape(branch.steps, branch.dim), hess
