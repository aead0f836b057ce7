"""Per-phase Newton-Raphson power flow in polar form.

Each phase is solved as an independent single-phase copy of the feeder
(series impedances only, no line charging). Quantities are per-unit and
angles are radians.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import kernels
from .netmodel import PHASES, GridModel, UnitError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 50
_DIVERGENCE_STREAK = 5

SLACK_ANGLES_DEG = {"a": 0.0, "b": -120.0, "c": 120.0}


class PowerFlowError(RuntimeError):
    pass


class DivergenceError(PowerFlowError):
    pass


class SingularJacobianError(PowerFlowError):
    pass


class UnconvergedSolutionError(PowerFlowError):
    pass


def default_slack_phasor(phase: str) -> complex:
    return cmath.rect(1.0, math.radians(SLACK_ANGLES_DEG[phase]))


def admittance_matrix(grid: GridModel) -> np.ndarray:
    n = grid.n_bus
    y = np.zeros((n, n), dtype=complex)
    for ln in grid.lines:
        i, j = grid.position(ln.from_bus), grid.position(ln.to_bus)
        ys = 1.0 / ln.z
        y[i, i] += ys
        y[j, j] += ys
        y[i, j] -= ys
        y[j, i] -= ys
    return y


def _polar_y(grid: GridModel) -> tuple[np.ndarray, np.ndarray]:
    y = admittance_matrix(grid)
    return np.ascontiguousarray(np.abs(y)), np.ascontiguousarray(np.angle(y))


def _require_pu(grid: GridModel) -> None:
    if not grid.is_per_unit:
        raise UnitError("power flow needs a per-unit grid; call per_unit() first")


def specified_injections(grid: GridModel, phase: str) -> np.ndarray:
    """Scheduled complex injections (negative loads) for one phase, all buses."""
    k = PHASES.index(phase)
    return np.array([-complex(b.p[k], b.q[k]) for b in grid.buses])


@dataclass(frozen=True)
class PhaseSolution:
    phase: str
    bus_ids: tuple[int, ...]
    slack_id: int
    vm: np.ndarray
    va: np.ndarray
    slack_injection: complex
    iterations: int
    mismatch: float
    tol: float

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    def voltage_at(self, bus_id: int) -> complex:
        k = self.bus_ids.index(bus_id)
        return complex(self.voltage[k])


@dataclass(frozen=True)
class Jacobian:
    """Four (N-1)x(N-1) blocks over the non-slack buses, rows/cols in ``bus_ids`` order."""

    pv: np.ndarray
    pd: np.ndarray
    qv: np.ndarray
    qd: np.ndarray
    bus_ids: tuple[int, ...]

    def full(self) -> np.ndarray:
        return np.block([[self.pv, self.pd], [self.qv, self.qd]])


@dataclass(frozen=True)
class BranchState:
    phase: str
    lines: tuple[tuple[int, int], ...]
    current: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray
    loss: np.ndarray

    @property
    def total_loss(self) -> float:
        return float(np.sum(self.loss))


def _non_slack_positions(grid: GridModel) -> np.ndarray:
    s = grid.position(grid.slack_id)
    return np.array([k for k in range(grid.n_bus) if k != s], dtype=np.intp)


def _mismatch(vm, va, ymag, yang, s_spec, idx) -> np.ndarray:
    p, q = kernels.power_injections(vm, va, ymag, yang)
    return np.concatenate([s_spec.real[idx] - p[idx], s_spec.imag[idx] - q[idx]])


def solve_phase(
    grid: GridModel,
    phase: str,
    slack_phasor: complex | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PhaseSolution:
    """Newton-Raphson from a flat start; converged when the inf-norm mismatch is <= tol."""
    _require_pu(grid)
    if phase not in PHASES:
        raise ValueError(f"unknown phase {phase!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if slack_phasor is None:
        slack_phasor = default_slack_phasor(phase)
    if abs(slack_phasor) <= 0:
        raise ValueError("slack phasor magnitude must be positive")

    ymag, yang = _polar_y(grid)
    s_spec = specified_injections(grid, phase)
    idx = _non_slack_positions(grid)
    k = len(idx)
    s_pos = grid.position(grid.slack_id)

    vm = np.ones(grid.n_bus)
    va = np.full(grid.n_bus, cmath.phase(slack_phasor))
    vm[s_pos] = abs(slack_phasor)

    f = _mismatch(vm, va, ymag, yang, s_spec, idx)
    norm = float(np.max(np.abs(f))) if k else 0.0
    it = 0
    streak = 0
    while norm > tol:
        if it >= max_iter:
            raise DivergenceError(
                f"phase {phase}: no convergence in {max_iter} iterations (mismatch {norm:.3e})"
            )
        pv, pd, qv, qd = kernels.jacobian_blocks(vm, va, ymag, yang, idx)
        jac = np.block([[pv, pd], [qv, qd]])
        try:
            lu = sla.lu_factor(jac, check_finite=True)
        except (ValueError, sla.LinAlgError) as exc:
            raise SingularJacobianError(f"phase {phase}: Jacobian factorization failed: {exc}") from None
        if np.any(np.diag(lu[0]) == 0.0):
            raise SingularJacobianError(f"phase {phase}: singular Jacobian at iteration {it}")
        dx = sla.lu_solve(lu, f)
        vm[idx] += dx[:k]
        va[idx] += dx[k:]
        it += 1
        f = _mismatch(vm, va, ymag, yang, s_spec, idx)
        new_norm = float(np.max(np.abs(f)))
        if not math.isfinite(new_norm):
            raise DivergenceError(f"phase {phase}: mismatch became non-finite")
        streak = streak + 1 if new_norm > norm else 0
        if streak >= _DIVERGENCE_STREAK:
            raise DivergenceError(
                f"phase {phase}: mismatch grew for {_DIVERGENCE_STREAK} consecutive iterations"
            )
        norm = new_norm

    if np.any(vm <= 0):
        raise DivergenceError(f"phase {phase}: non-positive voltage magnitude in solution")
    v = vm * np.exp(1j * va)
    y = ymag * np.exp(1j * yang)
    s_slack = v[s_pos] * np.conj(y[s_pos] @ v)
    for arr in (vm, va):
        arr.setflags(write=False)
    return PhaseSolution(
        phase=phase,
        bus_ids=grid.bus_ids,
        slack_id=grid.slack_id,
        vm=vm,
        va=va,
        slack_injection=complex(s_slack),
        iterations=it,
        mismatch=norm,
        tol=tol,
    )


def solution_mismatch(grid: GridModel, sol: PhaseSolution) -> float:
    ymag, yang = _polar_y(grid)
    idx = _non_slack_positions(grid)
    if not len(idx):
        return 0.0
    f = _mismatch(np.ascontiguousarray(sol.vm), np.ascontiguousarray(sol.va), ymag, yang,
                  specified_injections(grid, sol.phase), idx)
    return float(np.max(np.abs(f)))


def assemble_jacobian(grid: GridModel, sol: PhaseSolution) -> Jacobian:
    """Jacobian blocks evaluated at a converged solution."""
    _require_pu(grid)
    if sol.bus_ids != grid.bus_ids:
        raise ValueError("solution does not belong to this grid")
    if solution_mismatch(grid, sol) > sol.tol:
        raise UnconvergedSolutionError(f"phase {sol.phase}: solution mismatch exceeds its tolerance")
    ymag, yang = _polar_y(grid)
    idx = _non_slack_positions(grid)
    pv, pd, qv, qd = kernels.jacobian_blocks(
        np.ascontiguousarray(sol.vm), np.ascontiguousarray(sol.va), ymag, yang, idx
    )
    return Jacobian(pv, pd, qv, qd, tuple(grid.bus_ids[k] for k in idx))


def branch_quantities(grid: GridModel, sol: PhaseSolution) -> BranchState:
    """Line currents, terminal powers and series losses R|I|^2."""
    _require_pu(grid)
    v = sol.voltage
    n = len(grid.lines)
    cur = np.empty(n, dtype=complex)
    s_from = np.empty(n, dtype=complex)
    s_to = np.empty(n, dtype=complex)
    loss = np.empty(n)
    for k, ln in enumerate(grid.lines):
        vi, vj = v[grid.position(ln.from_bus)], v[grid.position(ln.to_bus)]
        i_ij = (vi - vj) / ln.z
        cur[k] = i_ij
        s_from[k] = vi * np.conj(i_ij)
        s_to[k] = -vj * np.conj(i_ij)
        loss[k] = ln.r * abs(i_ij) ** 2
    return BranchState(
        phase=sol.phase,
        lines=tuple((l.from_bus, l.to_bus) for l in grid.lines),
        current=cur,
        s_from=s_from,
        s_to=s_to,
        loss=loss,
    )


def power_balance_residual(grid: GridModel, sol: PhaseSolution, br: BranchState) -> float:
    """slack P - total load P - total loss (active power), per-unit."""
    k = PHASES.index(sol.phase)
    load = sum(b.p[k] for b in grid.buses)
    return sol.slack_injection.real - load - br.total_loss
