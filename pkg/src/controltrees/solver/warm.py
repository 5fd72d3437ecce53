"""Carry a previous cycle's solution into the next planning cycle."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..tree import ControlTree, TreeProblem
from .dal import SolverState
from .lagrangian import DualState


def warm_start(problem: TreeProblem, prev_tree: Optional[ControlTree],
               prev_state: Optional[SolverState], steps: float, extrapolate: bool = False,
               match: Optional[Callable[[str, Sequence[str]], Optional[int]]] = None):
    """Initial iterates for ``problem`` from a previous solve, matched by branch label.

    Returns ``(z_init, consensus_init, duals_init)``, all ``None`` when there
    is nothing to reuse. Branches without a match start from the previous
    branch of largest weight with fresh multipliers. ``consensus_init`` is
    ``None``: the solver averages the trunks of ``z_init``. ``extrapolate``
    is passed to :meth:`SolverState.shifted`. ``match(label, prev_labels)``
    picks the previous branch for a label with no exact match (multipliers
    are then reset).
    """
    if prev_tree is None or prev_state is None:
        return None, None, None
    shifted = prev_state.shifted(steps, extrapolate)
    by_label = {lab: i for i, lab in enumerate(prev_tree.labels) if lab}
    fallback = int(np.argmax(prev_tree.weights)) if prev_tree.weights else 0
    L = problem.horizon.trunk_steps
    z_init, duals = [], []
    for b in problem.branches:
        i = by_label.get(b.label)
        src = i
        if src is None and match is not None:
            src = match(b.label, prev_tree.labels)
        if src is None:
            src = fallback
        z_init.append(shifted.z[src])
        d = shifted.duals[src] if i is not None else None
        if d is not None and d.lam.shape == (b.ineq.dim,) and d.kappa.shape == (b.eq.dim,):
            duals.append(d)
        else:
            duals.append(DualState.zeros(b, L))
    return z_init, None, duals
