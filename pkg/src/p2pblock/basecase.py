"""Base-case operating state of a feeder: the three phase solutions and their sensitivities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import (
    DEFAULT_S_BASE_KVA,
    DEFAULT_V_BASE_KV,
    PHASES,
    GridModel,
    PhaseScaling,
    per_unit,
    scale_phase_loads,
    with_loads,
)
from .powerflow import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    BranchState,
    PhaseSolution,
    assemble_jacobian,
    branch_quantities,
    solve_phase,
)
from .sensitivity import SensitivityModel, reduce_sensitivities, sequence_components, vuf


@dataclass(frozen=True)
class BaseCase:
    grid: GridModel
    solutions: dict[str, PhaseSolution]
    branches: dict[str, BranchState]
    models: dict[str, SensitivityModel]

    @property
    def s_base(self) -> float:
        return self.grid.bases.s_kva  # type: ignore[union-attr]

    @property
    def node_ids(self) -> tuple[int, ...]:
        """Non-slack bus ids, the index order of every sensitivity matrix."""
        return self.models["a"].bus_ids

    def phase_voltages(self) -> np.ndarray:
        """3 x N complex array of base-case voltages (all buses, grid order)."""
        return np.vstack([self.solutions[ph].voltage for ph in PHASES])

    def sequences(self):
        v = self.phase_voltages()
        return sequence_components(v[0], v[1], v[2])

    def vuf_percent(self) -> np.ndarray:
        return vuf(self.sequences())


def solve_base_case(grid_pu: GridModel, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> BaseCase:
    sols, branches, models = {}, {}, {}
    for ph in PHASES:
        sol = solve_phase(grid_pu, ph, tol=tol, max_iter=max_iter)
        sols[ph] = sol
        branches[ph] = branch_quantities(grid_pu, sol)
        models[ph] = reduce_sensitivities(assemble_jacobian(grid_pu, sol), sol)
    return BaseCase(grid_pu, sols, branches, models)


def prepare_base_case(
    grid: GridModel,
    scaling: PhaseScaling | None = None,
    s_base: float = DEFAULT_S_BASE_KVA,
    v_base: float = DEFAULT_V_BASE_KV,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> BaseCase:
    """Scale phase loads, convert to per-unit (if needed) and solve the base case."""
    if scaling is not None:
        grid = scale_phase_loads(grid, scaling)
    if not grid.is_per_unit:
        grid = per_unit(grid, s_base, v_base)
    return solve_base_case(grid, tol=tol, max_iter=max_iter)


def injected_grid(base: BaseCase, injections: dict[str, np.ndarray]) -> GridModel:
    """Per-unit grid whose loads are reduced by the given per-phase non-slack injections."""
    ids = base.node_ids
    loads = {}
    for k, bus_id in enumerate(ids):
        bus = base.grid.bus(bus_id)
        per_phase = []
        for p, ph in enumerate(PHASES):
            dp = float(injections[ph][k]) if ph in injections else 0.0
            per_phase.append(complex(bus.p[p] - dp, bus.q[p]))
        loads[bus_id] = per_phase
    return with_loads(base.grid, loads)
