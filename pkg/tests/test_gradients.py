import zlib

import numpy as np
import pytest

from controltrees.acc import AccCostParams, CarState, condense_branch
from controltrees.solver import SolverConfig
from controltrees.solver.lagrangian import BranchLagrangian, DualState
from controltrees.tree import HorizonSpec

from gradcheck import CASES
from oracles import central_jacobian, relative_error


@pytest.mark.parametrize("name", list(CASES))
def test_analytic_derivatives_match_central_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = max(CASES[name](rng) for _ in range(30))
    assert worst <= 1e-5


def test_pedestrian_lagrangian_curvature_is_exact_with_a_fixed_active_set():
    # every multiplier positive: the active set cannot change, the Lagrangian is quadratic
    h = HorizonSpec()
    branch = condense_branch(CarState(0.0, 12.0), AccCostParams(), 40.0, h, 0.4)
    rng = np.random.default_rng(3)
    duals = DualState(rng.uniform(0.1, 1.0, branch.ineq.dim), np.zeros(0),
                      rng.normal(size=(h.trunk_steps, 1)))
    lag = BranchLagrangian(branch, rng.normal(size=(h.trunk_steps, 1)), duals,
                           SolverConfig(mu=5.0, rho=2.0))
    z = rng.uniform(-3, 1, size=branch.size)
    _, _, hess = lag.derivatives(z)
    num = central_jacobian(lambda x: lag.derivatives(x)[1], z)
    assert relative_error(hess, num) <= 1e-6
