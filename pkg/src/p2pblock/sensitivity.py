"""Active-power voltage sensitivities, phasor linearization and sequence analysis."""
from __future__ import annotations

import cmath
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .powerflow import Jacobian, PhaseSolution

A_OP = cmath.rect(1.0, 2.0 * cmath.pi / 3.0)
A2_OP = A_OP * A_OP


class SensitivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class SensitivityModel:
    """Per-phase linear map from non-slack active injections to voltage changes.

    ``s_v`` holds d|V|/dP and ``s_d`` holds dδ/dP; ``vm``/``va`` are the
    base-case magnitudes and angles of the same non-slack buses.
    """

    phase: str
    bus_ids: tuple[int, ...]
    s_v: np.ndarray
    s_d: np.ndarray
    vm: np.ndarray
    va: np.ndarray

    @property
    def size(self) -> int:
        return len(self.bus_ids)

    def position(self, bus_id: int) -> int:
        return self.bus_ids.index(bus_id)

    def phasor_map(self) -> np.ndarray:
        """Complex matrix E with dV = E @ dP."""
        return np.exp(1j * self.va)[:, None] * (self.s_v + 1j * self.vm[:, None] * self.s_d)


def _lu(m: np.ndarray, what: str):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(m)
    if np.any(np.diag(lu[0]) == 0.0) or not np.all(np.isfinite(lu[0])):
        raise SensitivityError(f"{what} is singular (condition estimate {np.linalg.cond(m):.3e})")
    return lu


def reduce_sensitivities(jac: Jacobian, sol: PhaseSolution) -> SensitivityModel:
    """Eliminate the reactive rows (dQ = 0) and invert the reduced active block."""
    lu_qd = _lu(jac.qd, "dQ/dδ block")
    qd_inv_qv = sla.lu_solve(lu_qd, jac.qv)
    schur = jac.pv - jac.pd @ qd_inv_qv
    lu_s = _lu(schur, "reduced active-power Jacobian")
    s_v = sla.lu_solve(lu_s, np.eye(schur.shape[0]))
    s_d = -qd_inv_qv @ s_v
    pos = [sol.bus_ids.index(b) for b in jac.bus_ids]
    return SensitivityModel(
        phase=sol.phase,
        bus_ids=jac.bus_ids,
        s_v=s_v,
        s_d=s_d,
        vm=np.asarray(sol.vm)[pos].copy(),
        va=np.asarray(sol.va)[pos].copy(),
    )


def predict_voltage_change(model: SensitivityModel, dp: np.ndarray) -> np.ndarray:
    """Linearized complex voltage change at the non-slack buses for injection change ``dp``."""
    dp = np.asarray(dp, dtype=float)
    if dp.shape != (model.size,):
        raise ValueError(f"injection vector must have length {model.size}, got shape {dp.shape}")
    dvm = model.s_v @ dp
    dva = model.s_d @ dp
    return (dvm + 1j * model.vm * dva) * np.exp(1j * model.va)


@dataclass(frozen=True)
class SequenceTriple:
    zero: complex
    positive: complex
    negative: complex

    def phases(self) -> tuple[complex, complex, complex]:
        """Reconstruct (va, vb, vc)."""
        v0, v1, v2 = self.zero, self.positive, self.negative
        return (v0 + v1 + v2, v0 + A2_OP * v1 + A_OP * v2, v0 + A_OP * v1 + A2_OP * v2)


def sequence_components(va, vb, vc) -> SequenceTriple:
    """Symmetrical components of a phase triple (scalars or arrays)."""
    return SequenceTriple(
        (va + vb + vc) / 3.0,
        (va + A_OP * vb + A2_OP * vc) / 3.0,
        (va + A2_OP * vb + A_OP * vc) / 3.0,
    )


def vuf(seq: SequenceTriple):
    """Voltage unbalance factor |V2/V1| in percent."""
    pos = np.abs(seq.positive)
    if np.any(pos == 0):
        raise ZeroDivisionError("positive-sequence voltage is zero")
    out = np.abs(seq.negative) / pos * 100.0
    return float(out) if np.ndim(out) == 0 else out
