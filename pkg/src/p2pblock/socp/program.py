"""Conic program container and its plain-text dump."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np


class ProgramError(ValueError):
    """Inconsistent program dimensions or bounds."""


@dataclass
class SecondOrderCone:
    """Constraint ``||G x + h||_2 <= d^T x + e``."""

    G: np.ndarray
    h: np.ndarray
    d: np.ndarray
    e: float
    tag: str = ""

    def __post_init__(self) -> None:
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        self.e = float(self.e)

    def slack(self, x: np.ndarray) -> float:
        return float(self.d @ x + self.e - np.linalg.norm(self.G @ x + self.h))


@dataclass
class ConicProgram:
    """maximize c^T x subject to linear equalities/inequalities, SOCs and bounds."""

    c: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    cones: list[SecondOrderCone] = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    eq_tags: list[str] | None = None
    in_tags: list[str] | None = None
    var_names: list[str] | None = None

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.n
        self.a_eq, self.b_eq = _rows(self.a_eq, self.b_eq, n, "equality")
        self.a_in, self.b_in = _rows(self.a_in, self.b_in, n, "inequality")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(-1)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(-1)
        self.cones = list(self.cones)
        if self.eq_tags is None:
            self.eq_tags = [f"eq{k}" for k in range(len(self.b_eq))]
        if self.in_tags is None:
            self.in_tags = [f"in{k}" for k in range(len(self.b_in))]
        if self.var_names is None:
            self.var_names = [f"x{k}" for k in range(n)]
        self.validate()

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def validate(self) -> None:
        n = self.n
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ProgramError("bound vectors must have one entry per variable")
        if np.any(self.lo > self.hi):
            raise ProgramError("lower bound exceeds upper bound")
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise ProgramError("NaN bound")
        for k, cone in enumerate(self.cones):
            m = cone.G.shape[0]
            if m < 1 or cone.G.shape[1] != n:
                raise ProgramError(f"cone {k}: G must be m x {n} with m >= 1, got {cone.G.shape}")
            if cone.h.shape != (m,) or cone.d.shape != (n,):
                raise ProgramError(f"cone {k}: h must have {m} entries and d {n}")
        if len(self.eq_tags) != len(self.b_eq) or len(self.in_tags) != len(self.b_in):
            raise ProgramError("tag lists must match the row counts")
        for arr in (self.c, self.a_eq, self.b_eq, self.a_in, self.b_in):
            if not np.all(np.isfinite(arr)):
                raise ProgramError("program data must be finite")

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def max_violation(self, x: np.ndarray) -> float:
        """Largest violation of any constraint at ``x`` (0 when feasible)."""
        v = [0.0]
        if len(self.b_eq):
            v.append(float(np.max(np.abs(self.a_eq @ x - self.b_eq))))
        if len(self.b_in):
            v.append(float(np.max(self.a_in @ x - self.b_in)))
        v.append(float(np.max(self.lo - x, initial=-np.inf)))
        v.append(float(np.max(x - self.hi, initial=-np.inf)))
        v.extend(-cone.slack(x) for cone in self.cones)
        return max(0.0, max(v))


def _rows(a, b, n: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    if a is None:
        if b is not None and len(b):
            raise ProgramError(f"{what} right-hand side given without a matrix")
        return np.zeros((0, n)), np.zeros(0)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        a = a.reshape(0, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape[1] != n or a.shape[0] != b.shape[0]:
        raise ProgramError(f"{what} rows: matrix {a.shape} and rhs {b.shape} do not fit {n} variables")
    return a, b


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    eq_dual: np.ndarray
    in_slack: np.ndarray
    in_dual: np.ndarray
    lo_slack: np.ndarray
    hi_slack: np.ndarray
    cone_slack: np.ndarray
    cone_dual: list[np.ndarray]
    certificate_residual: float | None = None
    backend: str = "ipm"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _fmt_row(vals) -> str:
    return " ".join(repr(float(v)) for v in vals)


def dump_program(prog: ConicProgram) -> str:
    """Plain-text standard form: maximize c'x, A_eq x = b_eq, A_in x <= b_in,
    lo <= x <= hi, ||G_k x + h_k|| <= d_k'x + e_k. One numeric row per line."""
    out = io.StringIO()
    out.write("# conic program, maximize c'x\n")
    out.write(f"n {prog.n}\n")
    out.write(f"c {_fmt_row(prog.c)}\n")
    out.write(f"lo {_fmt_row(prog.lo)}\n")
    out.write(f"hi {_fmt_row(prog.hi)}\n")
    out.write(f"eq {len(prog.b_eq)}\n")
    for tag, row, rhs in zip(prog.eq_tags, prog.a_eq, prog.b_eq):
        out.write(f"{tag} {_fmt_row(row)} = {float(rhs)!r}\n")
    out.write(f"in {len(prog.b_in)}\n")
    for tag, row, rhs in zip(prog.in_tags, prog.a_in, prog.b_in):
        out.write(f"{tag} {_fmt_row(row)} <= {float(rhs)!r}\n")
    out.write(f"soc {len(prog.cones)}\n")
    for k, cone in enumerate(prog.cones):
        out.write(f"cone {cone.tag or k} {cone.G.shape[0]}\n")
        for g, h in zip(cone.G, cone.h):
            out.write(f"  G {_fmt_row(g)} h {float(h)!r}\n")
        out.write(f"  d {_fmt_row(cone.d)} e {cone.e!r}\n")
    return out.getvalue()
