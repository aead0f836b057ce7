"""Incremental line-loss gradients and per-transaction loss coefficients.

The incremental current of line (i, j) is linear in the injections,
dI = (E_i - E_j) dP / z, so its loss R|dI|^2 is a quadratic form whose
gradient has a closed form in the sensitivity rows of the two end nodes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basecase import BaseCase
from .evaluator import TradeBlock, incidence_matrices
from .netmodel import PHASES, Line


class LossAllocError(ValueError):
    pass


def _line(base: BaseCase, line) -> Line:
    if isinstance(line, Line):
        return line
    i, j = line
    try:
        return base.grid.lines[base.grid.find_line(i, j)]
    except KeyError:
        raise LossAllocError(f"no line between buses {i} and {j}") from None


def _line_rows(base: BaseCase, ln: Line, phase: str) -> np.ndarray:
    """Complex row g with dI * z = g @ dP, i.e. A + jB stacked over nodes k."""
    if phase not in PHASES:
        raise LossAllocError(f"unknown phase {phase!r}")
    model = base.models[phase]
    emap = model.phasor_map()
    pos = {b: k for k, b in enumerate(model.bus_ids)}
    row = np.zeros(model.size, dtype=complex)
    if ln.from_bus in pos:
        row += emap[pos[ln.from_bus]]
    if ln.to_bus in pos:
        row -= emap[pos[ln.to_bus]]
    return row


def _check_dp(base: BaseCase, dp) -> np.ndarray:
    dp = np.asarray(dp, dtype=float)
    n = len(base.node_ids)
    if dp.shape != (n,):
        raise LossAllocError(f"injection vector must have length {n}, got shape {dp.shape}")
    return dp


def line_loss_gradient(base: BaseCase, line, phase: str, dp) -> np.ndarray:
    """d(R|dI|^2)/d(dP_k) for every non-slack node k (per-unit loss per per-unit injection)."""
    ln = _line(base, line)
    dp = _check_dp(base, dp)
    g = _line_rows(base, ln, phase)
    s = g @ dp                              # C + jD
    return 2.0 * ln.r / abs(ln.z) ** 2 * np.real(g * np.conj(s))


def linearized_line_loss(base: BaseCase, line, phase: str, dp) -> float:
    """R |dI(dP)|^2 with dI from the linear voltage map, per-unit."""
    ln = _line(base, line)
    dp = _check_dp(base, dp)
    g = _line_rows(base, ln, phase)
    return float(ln.r * abs(g @ dp) ** 2 / abs(ln.z) ** 2)


def total_loss_gradient(base: BaseCase, phase: str, dp) -> np.ndarray:
    dp = _check_dp(base, dp)
    out = np.zeros_like(dp)
    for ln in base.grid.lines:
        out += line_loss_gradient(base, ln, phase, dp)
    return out


def linearized_incremental_loss(base: BaseCase, injections: dict[str, np.ndarray]) -> float:
    """Sum over all lines and phases of R|dI|^2, per-unit."""
    return sum(
        linearized_line_loss(base, ln, ph, injections[ph])
        for ph in PHASES for ln in base.grid.lines
    )


@dataclass
class TlcReport:
    labels: list[str]
    producer_kw: np.ndarray
    consumer_kw: np.ndarray
    quantities_kw: np.ndarray
    incremental_loss_kw: float
    per_line: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def total_kw(self) -> np.ndarray:
        return self.producer_kw + self.consumer_kw

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["trade", "tlc_producer_kw", "tlc_consumer_kw", "total_kw"])
        for lab, m, n, t in zip(self.labels, self.producer_kw, self.consumer_kw, self.total_kw):
            w.writerow([lab, f"{m:.9g}", f"{n:.9g}", f"{t:.9g}"])
        return out.getvalue()


def transaction_loss_coefficients(base: BaseCase, block: TradeBlock, quantities_kw: Sequence[float],
                                  verbose: bool = False) -> TlcReport:
    """Each leg's loss share: gradient at the block's full injection times the leg's injection."""
    q_kw = np.asarray(quantities_kw, dtype=float)
    if q_kw.shape != (len(block),):
        raise LossAllocError(f"{len(block)} trades but {q_kw.size} quantities")
    if not np.all(np.isfinite(q_kw)) or np.any(q_kw < 0):
        raise LossAllocError("quantities must be finite and nonnegative")
    s_base = base.s_base
    q = q_kw / s_base
    inc = incidence_matrices(base, block)
    inj = {ph: inc[ph] @ q for ph in PHASES}
    pos = {b: k for k, b in enumerate(base.node_ids)}

    grads, per_line = {}, {}
    for ph in PHASES:
        rows = [line_loss_gradient(base, ln, ph, inj[ph]) for ln in base.grid.lines]
        grads[ph] = np.sum(rows, axis=0)
        if verbose:
            for ln, r in zip(base.grid.lines, rows):
                per_line[f"{ln.from_bus}-{ln.to_bus}{ph}"] = r
    tm = np.array([grads[t.producer[1]][pos[t.producer[0]]] * qt for t, qt in zip(block, q)])
    tn = np.array([-grads[t.consumer[1]][pos[t.consumer[0]]] * qt for t, qt in zip(block, q)])
    loss = linearized_incremental_loss(base, inj)
    return TlcReport([t.label for t in block], tm * s_base, tn * s_base, q_kw, loss * s_base,
                     per_line)
