"""Feeder data model, grid-file parsing and unit handling.

A feeder is described once, with per-phase bus loads and a single set of
series impedances shared by the three phases. Physical grids carry kW/kVAR
and ohms; per-unit grids carry the same fields divided by the recorded bases.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

PHASES = ("a", "b", "c")

DEFAULT_S_BASE_KVA = 100.0
DEFAULT_V_BASE_KV = 0.4


class GridError(ValueError):
    """Base class for invalid grid descriptions."""


class GridFormatError(GridError):
    """Malformed grid document (missing keys, bad numbers)."""


class DuplicateBusError(GridError):
    pass


class DanglingLineError(GridError):
    pass


class TopologyError(GridError):
    """Line graph is not a connected tree."""


class MissingSlackError(GridError):
    pass


class UnitError(GridError):
    """Bad base values or a unit-state mismatch."""


@dataclass(frozen=True)
class Bases:
    s_kva: float
    v_kv: float

    @property
    def z_ohm(self) -> float:
        # V[kV]^2 / S[MVA] gives ohms
        return self.v_kv**2 / (self.s_kva / 1000.0)


@dataclass(frozen=True)
class Bus:
    id: int
    p: tuple[float, float, float]
    q: tuple[float, float, float]

    def load(self, phase: str) -> complex:
        k = PHASES.index(phase)
        return complex(self.p[k], self.q[k])


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    ampacity: float | None = None

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)


@dataclass(frozen=True)
class PhaseScaling:
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0

    def __post_init__(self) -> None:
        for ph in PHASES:
            f = getattr(self, ph)
            if not math.isfinite(f) or f < 0:
                raise ValueError(f"phase scaling factor for {ph} must be >= 0, got {f}")

    def factor(self, phase: str) -> float:
        return getattr(self, phase)

    @classmethod
    def parse(cls, text: str) -> "PhaseScaling":
        parts = [s for s in text.replace(" ", "").split(",") if s]
        if len(parts) != 3:
            raise ValueError(f"phase scaling needs three comma-separated factors, got {text!r}")
        return cls(*(float(p) for p in parts))


@dataclass(frozen=True)
class GridModel:
    """Radial feeder: buses with per-phase loads, series-impedance lines, slack bus.

    ``bases`` is None for physical units (kW, kVAR, ohm) and records the
    per-unit bases otherwise.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack_id: int
    bases: Bases | None = None
    name: str = ""
    _index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        index: dict[int, int] = {}
        for pos, bus in enumerate(self.buses):
            if bus.id in index:
                raise DuplicateBusError(f"duplicate bus id {bus.id}")
            index[bus.id] = pos
        object.__setattr__(self, "_index", index)
        if self.slack_id not in index:
            raise MissingSlackError(f"slack bus {self.slack_id} is not among the buses")
        slack = self.buses[index[self.slack_id]]
        if any(self.slack_load_values(slack)):
            raise GridError(f"slack bus {self.slack_id} must carry zero load")
        for ln in self.lines:
            for end in (ln.from_bus, ln.to_bus):
                if end not in index:
                    raise DanglingLineError(
                        f"line {ln.from_bus}-{ln.to_bus} references unknown bus {end}"
                    )
            if ln.from_bus == ln.to_bus:
                raise TopologyError(f"line {ln.from_bus}-{ln.to_bus} is a self-loop")
            if not (ln.r >= 0) or not math.isfinite(ln.x) or ln.r + abs(ln.x) <= 0:
                raise GridError(f"line {ln.from_bus}-{ln.to_bus} has invalid impedance")
        _check_radial(len(self.buses), [(index[l.from_bus], index[l.to_bus]) for l in self.lines])

    @staticmethod
    def slack_load_values(bus: Bus) -> tuple[float, ...]:
        return tuple(v for v in (*bus.p, *bus.q) if v != 0.0)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def is_per_unit(self) -> bool:
        return self.bases is not None

    def position(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"unknown bus {bus_id}") from None

    def has_bus(self, bus_id: int) -> bool:
        return bus_id in self._index

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.position(bus_id)]

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    @property
    def non_slack_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.id != self.slack_id)

    def find_line(self, i: int, j: int) -> int:
        for k, ln in enumerate(self.lines):
            if (ln.from_bus, ln.to_bus) in ((i, j), (j, i)):
                return k
        raise KeyError(f"no line between buses {i} and {j}")


def _check_radial(n_bus: int, edges: Sequence[tuple[int, int]]) -> None:
    if len(edges) != n_bus - 1:
        raise TopologyError(
            f"radial feeder needs {n_bus - 1} lines for {n_bus} buses, got {len(edges)}"
        )
    parent = list(range(n_bus))

    def root(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for u, v in edges:
        ru, rv = root(u), root(v)
        if ru == rv:
            raise TopologyError("line graph contains a cycle")
        parent[ru] = rv
    # n-1 edges and no cycle implies connected


# --------------------------------------------------------------------------
# parsing and serialization

def _phase_values(raw: Any, what: str) -> tuple[float, float, float]:
    if isinstance(raw, Mapping):
        try:
            vals = [raw[ph] for ph in PHASES]
        except KeyError as exc:
            raise GridFormatError(f"{what}: per-phase mapping lacks phase {exc.args[0]}") from None
    elif isinstance(raw, (list, tuple)):
        if len(raw) != 3:
            raise GridFormatError(f"{what}: expected 3 per-phase values, got {len(raw)}")
        vals = list(raw)
    else:
        vals = [raw] * 3
    try:
        out = tuple(float(v) for v in vals)
    except (TypeError, ValueError):
        raise GridFormatError(f"{what}: non-numeric load value {raw!r}") from None
    if not all(math.isfinite(v) for v in out):
        raise GridFormatError(f"{what}: non-finite load value")
    return out  # type: ignore[return-value]


def _keys(per_unit: bool) -> tuple[str, str, str, str]:
    if per_unit:
        return "p_pu", "q_pu", "r_pu", "x_pu"
    return "p_kw", "q_kvar", "r_ohm", "x_ohm"


def grid_from_dict(doc: Mapping[str, Any]) -> GridModel:
    if not isinstance(doc, Mapping):
        raise GridFormatError("grid document must be an object")
    bases = None
    if doc.get("bases") is not None:
        b = doc["bases"]
        try:
            bases = Bases(float(b["s_kva"]), float(b["v_kv"]))
        except (KeyError, TypeError, ValueError):
            raise GridFormatError("bases must provide numeric s_kva and v_kv") from None
    pk, qk, rk, xk = _keys(bases is not None)
    if "slack" not in doc:
        raise MissingSlackError("grid document has no slack entry")
    for key in ("buses", "lines"):
        if key not in doc or not isinstance(doc[key], list):
            raise GridFormatError(f"grid document needs a list under {key!r}")
    buses = []
    for k, rec in enumerate(doc["buses"]):
        try:
            bid = int(rec["id"])
        except (KeyError, TypeError, ValueError):
            raise GridFormatError(f"bus record {k} lacks an integer id") from None
        p = _phase_values(rec.get(pk, 0.0), f"bus {bid} {pk}")
        q = _phase_values(rec.get(qk, 0.0), f"bus {bid} {qk}")
        buses.append(Bus(bid, p, q))
    lines = []
    for k, rec in enumerate(doc["lines"]):
        try:
            amp = rec.get("ampacity")
            lines.append(
                Line(
                    int(rec["from"]),
                    int(rec["to"]),
                    float(rec[rk]),
                    float(rec[xk]),
                    None if amp is None else float(amp),
                )
            )
        except (KeyError, TypeError, ValueError):
            raise GridFormatError(f"line record {k} needs from, to, {rk}, {xk}") from None
    try:
        slack = int(doc["slack"])
    except (TypeError, ValueError):
        raise GridFormatError("slack must be a bus id") from None
    return GridModel(tuple(buses), tuple(lines), slack, bases, str(doc.get("name", "")))


def parse_grid(text: str) -> GridModel:
    """Parse a JSON grid document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"grid file is not valid JSON: {exc}") from None
    return grid_from_dict(doc)


def _compact(vals: tuple[float, float, float]) -> float | list[float]:
    return vals[0] if vals[0] == vals[1] == vals[2] else list(vals)


def grid_to_dict(grid: GridModel) -> dict[str, Any]:
    pk, qk, rk, xk = _keys(grid.is_per_unit)
    doc: dict[str, Any] = {"name": grid.name, "slack": grid.slack_id}
    if grid.bases is not None:
        doc["bases"] = {"s_kva": grid.bases.s_kva, "v_kv": grid.bases.v_kv}
    doc["buses"] = [{"id": b.id, pk: _compact(b.p), qk: _compact(b.q)} for b in grid.buses]
    lines = []
    for ln in grid.lines:
        rec: dict[str, Any] = {"from": ln.from_bus, "to": ln.to_bus, rk: ln.r, xk: ln.x}
        if ln.ampacity is not None:
            rec["ampacity"] = ln.ampacity
        lines.append(rec)
    doc["lines"] = lines
    return doc


def serialize_grid(grid: GridModel) -> str:
    return json.dumps(grid_to_dict(grid), indent=1)


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return [{k.strip(): (v or "").strip() for k, v in row.items()} for row in csv.DictReader(fh)]


def _csv_phase(row: Mapping[str, str], key: str) -> Any:
    if all(f"{key}_{ph}" in row for ph in PHASES):
        return {ph: row[f"{key}_{ph}"] for ph in PHASES}
    return row.get(key) or 0.0


def parse_grid_csv(buses_csv: str | Path, lines_csv: str | Path) -> GridModel:
    """Build a physical-unit grid from a buses.csv / lines.csv pair.

    buses.csv: ``id, p_kw, q_kvar, slack`` (or ``p_kw_a, p_kw_b, ...`` per phase);
    the slack row has ``slack`` set to 1. lines.csv: ``from, to, r_ohm, x_ohm``.
    """
    bus_rows = _read_csv(Path(buses_csv))
    line_rows = _read_csv(Path(lines_csv))
    slack = [r["id"] for r in bus_rows if r.get("slack", "").lower() in ("1", "true", "yes")]
    if not slack:
        raise MissingSlackError(f"{buses_csv}: no row marked slack")
    if len(slack) > 1:
        raise GridFormatError(f"{buses_csv}: more than one slack row")
    doc = {
        "slack": slack[0],
        "buses": [
            {"id": r.get("id"), "p_kw": _csv_phase(r, "p_kw"), "q_kvar": _csv_phase(r, "q_kvar")}
            for r in bus_rows
        ],
        "lines": [dict(r) for r in line_rows],
    }
    for rec in doc["lines"]:
        if not rec.get("ampacity"):
            rec.pop("ampacity", None)
    return grid_from_dict(doc)


def load_grid(path: str | Path) -> GridModel:
    """Load a grid from a JSON file, or from a directory holding buses.csv and lines.csv."""
    p = Path(path)
    if p.is_dir():
        return parse_grid_csv(p / "buses.csv", p / "lines.csv")
    if not p.exists():
        raise FileNotFoundError(f"grid file not found: {p}")
    if p.suffix.lower() == ".csv":
        return parse_grid_csv(p, p.with_name("lines.csv"))
    return parse_grid(p.read_text())


def bundled_grid_path() -> Path:
    return Path(str(resources.files("p2pblock") / "data" / "ieee33_lv.json"))


def bundled_grid() -> GridModel:
    """Modified IEEE 33-bus feeder at 0.4 kV (physical units)."""
    return load_grid(bundled_grid_path())


# --------------------------------------------------------------------------
# unit handling

def per_unit(grid: GridModel, s_base: float = DEFAULT_S_BASE_KVA,
             v_base: float = DEFAULT_V_BASE_KV) -> GridModel:
    if grid.is_per_unit:
        raise UnitError("grid is already in per-unit")
    if not (s_base > 0 and v_base > 0):
        raise UnitError(f"bases must be positive, got s_base={s_base}, v_base={v_base}")
    bases = Bases(float(s_base), float(v_base))
    zb = bases.z_ohm
    buses = tuple(
        Bus(b.id, tuple(v / s_base for v in b.p), tuple(v / s_base for v in b.q))  # type: ignore[arg-type]
        for b in grid.buses
    )
    lines = tuple(replace(l, r=l.r / zb, x=l.x / zb) for l in grid.lines)
    return GridModel(buses, lines, grid.slack_id, bases, grid.name)


def to_physical(grid: GridModel) -> GridModel:
    if grid.bases is None:
        raise UnitError("grid is already in physical units")
    s, zb = grid.bases.s_kva, grid.bases.z_ohm
    buses = tuple(
        Bus(b.id, tuple(v * s for v in b.p), tuple(v * s for v in b.q))  # type: ignore[arg-type]
        for b in grid.buses
    )
    lines = tuple(replace(l, r=l.r * zb, x=l.x * zb) for l in grid.lines)
    return GridModel(buses, lines, grid.slack_id, None, grid.name)


def scale_phase_loads(grid: GridModel, scaling: PhaseScaling) -> GridModel:
    """Multiply every bus's phase-φ load (P and Q) by the phase-φ factor."""
    f = tuple(scaling.factor(ph) for ph in PHASES)
    buses = tuple(
        Bus(b.id, tuple(v * k for v, k in zip(b.p, f)), tuple(v * k for v, k in zip(b.q, f)))  # type: ignore[arg-type]
        for b in grid.buses
    )
    return replace(grid, buses=buses)


def refer_impedances(grid: GridModel, from_kv: float, to_kv: float) -> GridModel:
    """Re-express ohmic impedances at another voltage level, keeping their per-unit values."""
    if grid.is_per_unit:
        raise UnitError("impedance referral applies to physical grids")
    if not (from_kv > 0 and to_kv > 0):
        raise UnitError("voltage levels must be positive")
    k = (to_kv / from_kv) ** 2
    return replace(grid, lines=tuple(replace(l, r=l.r * k, x=l.x * k) for l in grid.lines))


def with_loads(grid: GridModel, loads: Mapping[int, Iterable[complex]]) -> GridModel:
    """Copy of ``grid`` with some buses' per-phase complex loads replaced."""
    buses = []
    for b in grid.buses:
        if b.id in loads:
            s = list(loads[b.id])
            buses.append(Bus(b.id, tuple(v.real for v in s), tuple(v.imag for v in s)))  # type: ignore[arg-type]
        else:
            buses.append(b)
    return replace(grid, buses=tuple(buses))
