"""Thin wrapper over the HiGHS dual simplex with a complementary-slackness check."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, SolverFailure, Unbounded

log = logging.getLogger(__name__)

_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
    "presolve": True,
}


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    duals: np.ndarray  # multipliers of A_ub rows, >= 0
    cs_residual: float  # max |lambda_i * slack_i|


def solve_lp(c, A_ub, b_ub, bounds=None, check_tol=1e-9) -> LPResult:
    """Minimize ``c @ x`` subject to ``A_ub @ x <= b_ub`` and variable bounds.

    Raises :class:`Infeasible`, :class:`Unbounded` or :class:`SolverFailure`.
    A complementary-slackness residual above ``check_tol`` (relative to the
    objective scale) is logged, not raised: HiGHS already certifies optimality.
    """
    c = np.asarray(c, dtype=float)
    A_ub = np.asarray(A_ub, dtype=float)
    b_ub = np.asarray(b_ub, dtype=float)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs-ds", options=_OPTIONS)
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status == 3:
        raise Unbounded(res.message)
    if res.status != 0:
        raise SolverFailure(res.message)
    duals = -np.asarray(res.ineqlin.marginals) if len(b_ub) else np.zeros(0)
    slack = b_ub - A_ub @ res.x if len(b_ub) else np.zeros(0)
    cs = float(np.max(np.abs(duals * slack))) if len(b_ub) else 0.0
    if cs > check_tol * max(1.0, abs(res.fun)):
        log.warning("complementary slackness residual %.3g above %.1g", cs, check_tol)
    return LPResult(res.x, float(res.fun), duals, cs)
