"""Second-order cone programs and an embedded interior-point solver.

``solve_conic`` dispatches to a named backend. The embedded ``"ipm"`` backend
is the default; other solvers can be registered with ``register_backend``
and must return a :class:`ConicSolution` under the same contract.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .ipm import SolverError, solution_from_x, solve_ipm
from .program import ConicProgram, ConicSolution, ProgramError, SecondOrderCone, dump_program

__all__ = [
    "ConicProgram",
    "ConicSolution",
    "ProgramError",
    "SecondOrderCone",
    "SolverError",
    "dump_program",
    "register_backend",
    "solve_conic",
]

Backend = Callable[[ConicProgram, float, int], ConicSolution]

_BACKENDS: dict[str, Backend] = {}


def register_backend(name: str, fn: Backend) -> None:
    _BACKENDS[name] = fn


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _free_columns(prog: ConicProgram) -> np.ndarray:
    used = np.zeros(prog.n, dtype=bool)
    for mat in (prog.a_eq, prog.a_in):
        if mat.size:
            used |= np.any(mat != 0, axis=0)
    used |= np.isfinite(prog.lo) | np.isfinite(prog.hi)
    for cone in prog.cones:
        used |= np.any(cone.G != 0, axis=0) | (cone.d != 0)
    return ~used


def solve_conic(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200,
                backend: str = "ipm") -> ConicSolution:
    """Maximize ``prog``. Status is one of optimal, infeasible, unbounded, max-iterations."""
    prog.validate()
    if not tol > 0:
        raise ValueError("tol must be positive")
    try:
        fn = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown conic backend {backend!r}; have {available_backends()}") from None
    free = _free_columns(prog)
    if np.any(free & (prog.c != 0)):
        sol = solution_from_x(prog, "unbounded", np.full(prog.n, np.nan), objective=np.inf)
        sol.backend = backend
        return sol
    if np.any(free):
        # untouched, zero-cost variables: pin them at zero
        lo, hi = prog.lo.copy(), prog.hi.copy()
        lo[free] = 0.0
        hi[free] = 0.0
        prog = ConicProgram(prog.c, prog.a_eq, prog.b_eq, prog.a_in, prog.b_in, prog.cones, lo, hi,
                            prog.eq_tags, prog.in_tags, prog.var_names)
    return fn(prog, tol, max_iter)


def _solve_cvxpy(prog: ConicProgram, tol: float, max_iter: int) -> ConicSolution:
    import cvxpy as cp

    x = cp.Variable(prog.n)
    cons = []
    if len(prog.b_eq):
        cons.append(prog.a_eq @ x == prog.b_eq)
    if len(prog.b_in):
        cons.append(prog.a_in @ x <= prog.b_in)
    fin_lo = np.isfinite(prog.lo)
    fin_hi = np.isfinite(prog.hi)
    if fin_lo.any():
        cons.append(x[fin_lo] >= prog.lo[fin_lo])
    if fin_hi.any():
        cons.append(x[fin_hi] <= prog.hi[fin_hi])
    for cone in prog.cones:
        cons.append(cp.SOC(cone.d @ x + cone.e, cone.G @ x + cone.h))
    problem = cp.Problem(cp.Maximize(prog.c @ x), cons)
    problem.solve(solver=cp.CLARABEL, max_iter=max_iter, tol_gap_abs=tol, tol_gap_rel=tol,
                  tol_feas=tol)
    status = {
        cp.OPTIMAL: "optimal",
        cp.INFEASIBLE: "infeasible",
        cp.UNBOUNDED: "unbounded",
    }.get(problem.status, "max-iterations")
    if status != "optimal":
        sol = solution_from_x(prog, status, np.full(prog.n, np.nan))
    else:
        sol = solution_from_x(prog, status, np.asarray(x.value, dtype=float))
    sol.backend = "cvxpy"
    return sol


register_backend("ipm", solve_ipm)
register_backend("cvxpy", _solve_cvxpy)
