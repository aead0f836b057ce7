"""Network-constrained evaluation of a block of peer-to-peer trades.

Every trade gets one nonnegative variable, its traded power. A trade injects
+q at the producer's (bus, phase) and -q at the consumer's, so the pairing
and sign rules of the market are satisfied by construction. Voltage
deviation rows, per-node unbalance cones and per-line congestion cones are
all linear (or conic) in these variables through the base-case sensitivities.

All constraint rows are normalized by their bound, so reported slacks are
fractions of the limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .basecase import BaseCase, injected_grid
from .netmodel import PHASES
from .powerflow import branch_quantities, solve_phase
from .sensitivity import A2_OP, A_OP, sequence_components, vuf
from .socp import ConicProgram, SecondOrderCone, solve_conic

BINDING_TOL = 1e-6
ACCEPT_RTOL = 1e-6


class TradeError(ValueError):
    pass


@dataclass(frozen=True)
class Limits:
    """Network limits: unbalance bound ``alpha`` (fraction, None = off), voltage
    deviation ``dv_max`` (pu), current headroom ``rho`` (fraction of base current)
    with absolute floor ``i_floor`` (pu)."""

    alpha: float | None = 0.02
    dv_max: float = 0.05
    rho: float = 0.30
    i_floor: float = 0.01

    def __post_init__(self) -> None:
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1] or be disabled, got {self.alpha}")
        for name in ("dv_max", "rho", "i_floor"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @classmethod
    def from_percent(cls, alpha_pct: float | None, dv_pct: float, di_pct: float,
                     i_floor_pu: float = 0.01) -> "Limits":
        return cls(None if alpha_pct is None else alpha_pct / 100.0, dv_pct / 100.0,
                   di_pct / 100.0, i_floor_pu)

    def current_headroom(self, base_current: np.ndarray) -> np.ndarray:
        return np.maximum(self.rho * np.abs(base_current), self.i_floor)


@dataclass(frozen=True)
class Trade:
    producer: tuple[int, str]
    consumer: tuple[int, str]
    quantity_kw: float | None = None
    price: float | None = None

    def __post_init__(self) -> None:
        for end in (self.producer, self.consumer):
            if end[1] not in PHASES:
                raise TradeError(f"unknown phase {end[1]!r} in trade {self.label}")
        if tuple(self.producer) == tuple(self.consumer):
            raise TradeError(f"trade {self.label}: producer and consumer coincide")
        if self.quantity_kw is not None and not self.quantity_kw > 0:
            raise TradeError(f"trade {self.label}: quantity must be > 0")

    @property
    def label(self) -> str:
        return f"{self.producer[0]}{self.producer[1]}->{self.consumer[0]}{self.consumer[1]}"


@dataclass(frozen=True)
class TradeBlock:
    trades: tuple[Trade, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "trades", tuple(self.trades))

    def __len__(self) -> int:
        return len(self.trades)

    def __iter__(self):
        return iter(self.trades)

    @classmethod
    def from_pairs(cls, producers: Sequence[int], consumers: Sequence[int],
                   producer_phase: str = "a", consumer_phase: str = "a",
                   quantities_kw: Sequence[float] | None = None) -> "TradeBlock":
        if len(producers) != len(consumers):
            raise TradeError("producer and consumer lists differ in length")
        qs = quantities_kw if quantities_kw is not None else [None] * len(producers)
        return cls(tuple(
            Trade((p, producer_phase), (c, consumer_phase), q)
            for p, c, q in zip(producers, consumers, qs)
        ))

    def negotiated_kw(self) -> np.ndarray:
        if any(t.quantity_kw is None for t in self.trades):
            raise TradeError("every trade needs a negotiated quantity in vetting mode")
        return np.array([t.quantity_kw for t in self.trades], dtype=float)


@dataclass
class BlockProgram:
    program: ConicProgram
    trades: tuple[Trade, ...]
    incidence: dict[str, np.ndarray]   # phase -> (nodes x trades) in {-1, 0, 1}
    node_ids: tuple[int, ...]
    s_base: float
    counts: dict[str, int] = field(default_factory=dict)

    def injections(self, q_pu: np.ndarray) -> dict[str, np.ndarray]:
        return {ph: m @ q_pu for ph, m in self.incidence.items()}


@dataclass
class BlockEvaluation:
    trades: tuple[Trade, ...]
    mode: str
    status: str
    quantities_kw: np.ndarray
    binding: list[str]
    limiting: list[str]
    verdicts: list[str] | None = None
    iterations: int = 0

    @property
    def total_kw(self) -> float:
        return float(np.sum(self.quantities_kw))

    @property
    def objective_kw(self) -> float:
        return self.total_kw

    def accepted(self) -> list[Trade]:
        return [t for t, v in zip(self.trades, self.verdicts or []) if v == "accepted"]


# --------------------------------------------------------------------------

def validate_block(base: BaseCase, block: TradeBlock) -> None:
    if not len(block):
        raise TradeError("trade block is empty")
    for t in block:
        for role, (bus, _) in (("producer", t.producer), ("consumer", t.consumer)):
            if not base.grid.has_bus(bus):
                raise TradeError(f"trade {t.label}: {role} bus {bus} does not exist")
            if bus == base.grid.slack_id:
                raise TradeError(f"trade {t.label}: the slack bus cannot trade")


def incidence_matrices(base: BaseCase, block: TradeBlock) -> dict[str, np.ndarray]:
    ids = base.node_ids
    pos = {b: k for k, b in enumerate(ids)}
    mats = {ph: np.zeros((len(ids), len(block))) for ph in PHASES}
    for t, tr in enumerate(block):
        mats[tr.producer[1]][pos[tr.producer[0]], t] += 1.0
        mats[tr.consumer[1]][pos[tr.consumer[0]], t] -= 1.0
    return mats


def _capped_norm(rows: np.ndarray, bound: float, tag: str):
    """||rows @ x|| <= bound, normalized; zero bound becomes equality rows."""
    if bound <= 1e-14:
        return None, rows
    n = rows.shape[1]
    return SecondOrderCone(rows / bound, np.zeros(rows.shape[0]), np.zeros(n), 1.0, tag), None


def build_block_program(base: BaseCase, block: TradeBlock, limits: Limits,
                        mode: str = "capacity") -> BlockProgram:
    if mode not in ("capacity", "vetting"):
        raise ValueError(f"mode must be capacity or vetting, got {mode!r}")
    validate_block(base, block)
    n_t = len(block)
    s_base = base.s_base
    ids = base.node_ids
    inc = incidence_matrices(base, block)
    # complex dV rows per phase: (nodes x trades)
    dv_rows = {ph: base.models[ph].phasor_map() @ inc[ph] for ph in PHASES}
    mag_rows = {ph: base.models[ph].s_v @ inc[ph] for ph in PHASES}

    a_in, b_in, in_tags = [], [], []
    a_eq, b_eq, eq_tags = [], [], []
    cones: list[SecondOrderCone] = []

    # voltage deviation
    for ph in PHASES:
        for k, bus in enumerate(ids):
            row = mag_rows[ph][k]
            if limits.dv_max > 0:
                a_in += [row / limits.dv_max, -row / limits.dv_max]
                b_in += [1.0, 1.0]
                in_tags += [f"dv:{bus}{ph}:max", f"dv:{bus}{ph}:min"]
            else:
                a_eq.append(row)
                b_eq.append(0.0)
                eq_tags.append(f"dv:{bus}{ph}")

    # voltage unbalance
    n_vuf = 0
    if limits.alpha is not None:
        alpha = limits.alpha
        seq = base.sequences()
        node_pos = [base.grid.position(b) for b in ids]
        neg = (dv_rows["a"] + A2_OP * dv_rows["b"] + A_OP * dv_rows["c"]) / 3.0
        pos_ = (dv_rows["a"] + A_OP * dv_rows["b"] + A2_OP * dv_rows["c"]) / 3.0
        lhs = neg - alpha * pos_
        for k, bus in enumerate(ids):
            p = node_pos[k]
            bound = abs(alpha * seq.positive[p] - seq.negative[p])
            rows = np.vstack([lhs[k].real, lhs[k].imag])
            cone, eq = _capped_norm(rows, bound, f"vuf:{bus}")
            if cone is not None:
                cones.append(cone)
            else:
                a_eq += list(eq)
                b_eq += [0.0, 0.0]
                eq_tags += [f"vuf:{bus}:re", f"vuf:{bus}:im"]
            n_vuf += 1

    # congestion
    node_index = {b: k for k, b in enumerate(ids)}
    n_line = 0
    for ph in PHASES:
        headroom = limits.current_headroom(base.branches[ph].current)
        zero = np.zeros(n_t, dtype=complex)
        for l, ln in enumerate(base.grid.lines):
            ri = dv_rows[ph][node_index[ln.from_bus]] if ln.from_bus in node_index else zero
            rj = dv_rows[ph][node_index[ln.to_bus]] if ln.to_bus in node_index else zero
            diff = ri - rj
            rows = np.vstack([diff.real, diff.imag])
            tag = f"line:{ln.from_bus}-{ln.to_bus}{ph}"
            cone, eq = _capped_norm(rows, abs(ln.z) * headroom[l], tag)
            if cone is not None:
                cones.append(cone)
            else:
                a_eq += list(eq)
                b_eq += [0.0, 0.0]
                eq_tags += [f"{tag}:re", f"{tag}:im"]
            n_line += 1

    hi = np.full(n_t, np.inf)
    if mode == "vetting":
        hi = block.negotiated_kw() / s_base
    prog = ConicProgram(
        c=np.full(n_t, 2.0),
        a_eq=np.array(a_eq).reshape(len(a_eq), n_t) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        a_in=np.array(a_in).reshape(len(a_in), n_t) if a_in else None,
        b_in=np.array(b_in) if b_in else None,
        cones=cones,
        lo=np.zeros(n_t),
        hi=hi,
        eq_tags=eq_tags,
        in_tags=in_tags,
        var_names=[t.label for t in block],
    )
    counts = {"variables": n_t, "voltage_rows": 2 * len(PHASES) * len(ids),
              "vuf_cones": n_vuf, "line_cones": n_line}
    return BlockProgram(prog, block.trades, inc, ids, s_base, counts)


def _binding(bp: BlockProgram, sol) -> tuple[list[str], list[str]]:
    prog = bp.program
    x = sol.x
    n = prog.n
    tags, grads = [], []
    for k, tag in enumerate(prog.in_tags):
        if sol.in_slack[k] <= BINDING_TOL:
            tags.append(tag)
            grads.append(-prog.a_in[k])
    for k, cone in enumerate(prog.cones):
        if sol.cone_slack[k] <= BINDING_TOL:
            r = cone.G @ x + cone.h
            nr = np.linalg.norm(r)
            g = cone.d - (cone.G.T @ r / nr if nr > 0 else 0.0)
            tags.append(cone.tag)
            grads.append(g)
    for i in range(n):
        if np.isfinite(prog.hi[i]) and sol.hi_slack[i] <= BINDING_TOL * max(1.0, abs(prog.hi[i])):
            tags.append(f"cap:{prog.var_names[i]}")
            g = np.zeros(n)
            g[i] = -1.0
            grads.append(g)
    limiting = []
    for i in range(n):
        best, best_g = "", 0.0
        for tag, g in zip(tags, grads):
            if g[i] < best_g - 1e-12:
                best, best_g = tag, g[i]
        limiting.append(best)
    return tags, limiting


def _solve(bp: BlockProgram, mode: str, tol: float, backend: str, fair_split: bool,
           reference: np.ndarray | None) -> BlockEvaluation:
    sol = solve_conic(bp.program, tol=tol, backend=backend)
    if sol.status != "optimal":
        q = np.full(len(bp.trades), np.nan)
        return BlockEvaluation(bp.trades, mode, sol.status, q, [], [""] * len(q), None,
                               sol.iterations)
    x = np.clip(sol.x, 0.0, None)
    if fair_split and len(bp.trades) > 1:
        x2 = _fair_split(bp, float(np.sum(x)), tol, backend, reference)
        if x2 is not None:
            x = x2
            from .socp.ipm import solution_from_x
            sol = solution_from_x(bp.program, "optimal", x)
    binding, limiting = _binding(bp, sol)
    return BlockEvaluation(bp.trades, mode, "optimal", x * bp.s_base, binding, limiting, None,
                           sol.iterations)


def _fair_split(bp: BlockProgram, total: float, tol: float, backend: str,
                reference: np.ndarray | None) -> np.ndarray | None:
    """Second pass: at (nearly) the optimal total, maximize min_t q_t / ref_t."""
    prog = bp.program
    n = prog.n
    ref = np.ones(n) if reference is None else np.asarray(reference, dtype=float) / bp.s_base
    ref = np.where(ref > 0, ref, 1.0)

    def widen(mat):
        return np.hstack([mat, np.zeros((mat.shape[0], 1))])

    a_in = np.vstack([
        widen(prog.a_in),
        np.hstack([-np.ones((1, n)), np.zeros((1, 1))]),
        np.hstack([-np.eye(n), ref[:, None]]),
    ])
    b_in = np.concatenate([prog.b_in, [-total * (1.0 - 1e-7)], np.zeros(n)])
    cones = [SecondOrderCone(widen(c.G), c.h, np.append(c.d, 0.0), c.e, c.tag) for c in prog.cones]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    second = ConicProgram(c, widen(prog.a_eq), prog.b_eq, a_in, b_in, cones,
                          np.append(prog.lo, 0.0), np.append(prog.hi, np.inf))
    sol = solve_conic(second, tol=tol, backend=backend)
    if sol.status != "optimal":
        return None
    return np.clip(sol.x[:n], 0.0, None)


def evaluate_capacity(base: BaseCase, block: TradeBlock, limits: Limits, *, tol: float = 1e-8,
                      backend: str = "ipm", fair_split: bool = False,
                      reference_kw: Sequence[float] | None = None) -> BlockEvaluation:
    """Largest admissible per-trade powers (kW) for the block."""
    bp = build_block_program(base, block, limits, "capacity")
    ref = None if reference_kw is None else np.asarray(reference_kw, dtype=float)
    return _solve(bp, "capacity", tol, backend, fair_split, ref)


def vet_block(base: BaseCase, block: TradeBlock, limits: Limits, *, tol: float = 1e-8,
              backend: str = "ipm") -> BlockEvaluation:
    """Check negotiated quantities; each trade is accepted, curtailed or rejected."""
    negotiated = block.negotiated_kw()
    bp = build_block_program(base, block, limits, "vetting")
    ev = _solve(bp, "vetting", tol, backend, False, None)
    if ev.status != "optimal":
        return ev
    q = np.minimum(ev.quantities_kw, negotiated)
    verdicts = []
    for qt, neg in zip(q, negotiated):
        if abs(qt - neg) <= ACCEPT_RTOL * neg:
            verdicts.append("accepted")
            qt = neg
        elif qt <= ACCEPT_RTOL * neg:
            verdicts.append("rejected")
        else:
            verdicts.append("curtailed")
    ev.quantities_kw = np.array([
        neg if v == "accepted" else (0.0 if v == "rejected" else qt)
        for qt, neg, v in zip(q, negotiated, verdicts)
    ])
    ev.verdicts = verdicts
    return ev


def frontier_sweep(base: BaseCase, block: TradeBlock, limits: Limits, target: int,
                   others_totals_kw: Iterable[float], weights: Sequence[float] | None = None,
                   *, tol: float = 1e-8, backend: str = "ipm") -> list[tuple[float, float]]:
    """Target trade's maximum power as the other trades are fixed at growing totals.

    The other trades share each total in proportion to ``weights`` (default:
    their split in the block's capacity optimum, or equal shares if that is
    degenerate).
    """
    n_t = len(block)
    if n_t < 2:
        raise TradeError("frontier sweep needs at least two trades")
    if not 0 <= target < n_t:
        raise IndexError(f"target trade {target} out of range")
    others = [k for k in range(n_t) if k != target]
    bp = build_block_program(base, block, limits, "capacity")
    if weights is None:
        cap = _solve(bp, "capacity", tol, backend, False, None)
        w = cap.quantities_kw[others] if cap.status == "optimal" else np.zeros(len(others))
        if not np.sum(w) > 0:
            w = np.ones(len(others))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(others),) or np.any(w < 0) or not np.sum(w) > 0:
            raise ValueError("weights must be nonnegative, one per non-target trade, not all zero")
    w = w / np.sum(w)
    base_prog = bp.program
    c = np.zeros(n_t)
    c[target] = 1.0
    curve = []
    for total in others_totals_kw:
        fixed = total * w / bp.s_base
        lo = base_prog.lo.copy()
        hi = base_prog.hi.copy()
        lo[others] = fixed
        hi[others] = fixed
        prog = ConicProgram(c, base_prog.a_eq, base_prog.b_eq, base_prog.a_in, base_prog.b_in,
                            base_prog.cones, lo, hi, base_prog.eq_tags, base_prog.in_tags,
                            base_prog.var_names)
        sol = solve_conic(prog, tol=tol, backend=backend)
        value = max(0.0, float(sol.x[target]) * bp.s_base) if sol.status == "optimal" else 0.0
        curve.append((float(total), value))
    return curve


# --------------------------------------------------------------------------
# physical re-check with the full power flow

@dataclass
class PhysicalCheck:
    dv: dict[str, np.ndarray]            # |V_new| - |V_base| per phase, all buses
    vuf_pct: np.ndarray                  # per bus after trades
    di_ratio: dict[str, np.ndarray]      # |I_new - I_base| / headroom per phase, per line
    currents: dict[str, np.ndarray]

    @property
    def max_dv(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.dv.values())

    @property
    def max_vuf_pct(self) -> float:
        return float(np.max(self.vuf_pct))

    @property
    def max_di_ratio(self) -> float:
        return max(float(np.max(r)) for r in self.di_ratio.values())

    def satisfied(self, limits: Limits, dv_slack: float = 0.0, vuf_slack_pp: float = 0.0,
                  di_factor: float = 1.0) -> bool:
        ok = self.max_dv <= limits.dv_max + dv_slack and self.max_di_ratio <= di_factor
        if limits.alpha is not None:
            ok = ok and self.max_vuf_pct <= limits.alpha * 100.0 + vuf_slack_pp
        return ok


def physical_check(base: BaseCase, block: TradeBlock, quantities_kw: Sequence[float],
                   limits: Limits) -> PhysicalCheck:
    """Re-solve the power flow with the trades applied and measure every limit."""
    q = np.asarray(quantities_kw, dtype=float) / base.s_base
    inc = incidence_matrices(base, block)
    grid = injected_grid(base, {ph: inc[ph] @ q for ph in PHASES})
    dv, di, cur, volts = {}, {}, {}, []
    for ph in PHASES:
        sol = solve_phase(grid, ph, tol=base.solutions[ph].tol)
        br = branch_quantities(grid, sol)
        dv[ph] = sol.vm - base.solutions[ph].vm
        headroom = limits.current_headroom(base.branches[ph].current)
        di[ph] = np.abs(br.current - base.branches[ph].current) / headroom
        cur[ph] = br.current
        volts.append(sol.voltage)
    seq = sequence_components(*volts)
    vuf_all = vuf(seq)
    s = base.grid.position(base.grid.slack_id)
    vuf_all = np.asarray(vuf_all, dtype=float).copy()
    vuf_all[s] = 0.0
    return PhysicalCheck(dv, vuf_all, di, cur)


# --------------------------------------------------------------------------
# trade block files

TRADE_COLUMNS = ("producer_bus", "producer_phase", "consumer_bus", "consumer_phase",
                 "quantity_kw", "price")


def parse_trade_block(text: str, source: str = "<trades>") -> TradeBlock:
    """CSV records: producer_bus, producer_phase, consumer_bus, consumer_phase,
    quantity_kw (blank in capacity mode), price (optional)."""
    import csv
    import io

    rows = csv.DictReader(io.StringIO(text))
    need = set(TRADE_COLUMNS[:4])
    if rows.fieldnames is None or not need <= set(rows.fieldnames):
        raise TradeError(f"{source}: columns must include {sorted(need)}")
    trades = []
    for n, r in enumerate(rows, start=2):
        try:
            q = (r.get("quantity_kw") or "").strip()
            p = (r.get("price") or "").strip()
            trades.append(Trade(
                (int(r["producer_bus"]), r["producer_phase"].strip().lower()),
                (int(r["consumer_bus"]), r["consumer_phase"].strip().lower()),
                float(q) if q else None,
                float(p) if p else None,
            ))
        except (TypeError, ValueError) as exc:
            raise TradeError(f"{source} line {n}: {exc}") from None
    return TradeBlock(tuple(trades))


def read_trade_block(path) -> TradeBlock:
    from pathlib import Path

    path = Path(path)
    if not path.is_file():
        raise TradeError(f"trade file not found: {path}")
    return parse_trade_block(path.read_text(), str(path))
