"""Block double auction: order matching, DSO vetting and loss-based settlement."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .netmodel import PHASES

SIDES = ("ask", "bid")


class MarketError(ValueError):
    pass


class SessionError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class Order:
    side: str
    peer: str
    bus: int
    phase: str
    qty_kw: float
    price: float
    slot: int = 0

    def __post_init__(self) -> None:
        if self.side not in SIDES:
            raise MarketError(f"order side must be ask or bid, got {self.side!r}")
        if self.phase not in PHASES:
            raise MarketError(f"order of peer {self.peer}: unknown phase {self.phase!r}")
        if not (math.isfinite(self.qty_kw) and self.qty_kw > 0):
            raise MarketError(f"order of peer {self.peer}: quantity must be > 0, got {self.qty_kw}")
        if not (math.isfinite(self.price) and self.price >= 0):
            raise MarketError(f"order of peer {self.peer}: price must be >= 0, got {self.price}")

    @property
    def key(self) -> tuple:
        return (self.price, self.peer, self.bus, self.phase)

    def describe(self) -> str:
        return (f"{self.side} peer={self.peer} bus={self.bus} phase={self.phase} "
                f"qty={self.qty_kw:g} price={self.price:g} slot={self.slot}")


@dataclass(frozen=True)
class Match:
    ask: Order
    bid: Order
    qty_kw: float
    price: float

    @property
    def producer(self) -> tuple[int, str]:
        return (self.ask.bus, self.ask.phase)

    @property
    def consumer(self) -> tuple[int, str]:
        return (self.bid.bus, self.bid.phase)


@dataclass
class MatchResult:
    matches: list[Match]
    unmatched: list[Order]

    @property
    def matched_kw(self) -> float:
        return float(sum(m.qty_kw for m in self.matches))

    def trade_block(self):
        from .evaluator import Trade, TradeBlock
        return TradeBlock(tuple(Trade(m.producer, m.consumer, m.qty_kw, m.price)
                                for m in self.matches))


def _check_book(asks: Sequence[Order], bids: Sequence[Order]) -> None:
    slots = {o.slot for o in list(asks) + list(bids)}
    if len(slots) > 1:
        raise MarketError(f"orders span several slots: {sorted(slots)}")
    for o in asks:
        if o.side != "ask":
            raise MarketError(f"bid in the ask list: {o.describe()}")
    for o in bids:
        if o.side != "bid":
            raise MarketError(f"ask in the bid list: {o.describe()}")
    sellers = {(o.bus, o.phase) for o in asks} | {o.peer for o in asks}
    for o in bids:
        if (o.bus, o.phase) in sellers or o.peer in sellers:
            raise MarketError(f"peer or node both buys and sells in one slot: {o.describe()}")


def match_orders(asks: Sequence[Order], bids: Sequence[Order]) -> MatchResult:
    """Volume-maximizing price-crossing match with midpoint clearing prices.

    A bid is compatible with every ask priced at or below it, so compatible
    sets are nested along the bid price. Serving bids from the lowest price up,
    each from the cheapest asks still available, therefore never blocks a
    later bid and attains the maximum matched volume.
    """
    _check_book(asks, bids)
    ask_q = sorted(((o, o.qty_kw) for o in asks), key=lambda t: t[0].key)
    remaining = [q for _, q in ask_q]
    matches: list[Match] = []
    bid_left: list[tuple[Order, float]] = []
    for bid in sorted(bids, key=lambda o: o.key):
        need = bid.qty_kw
        for k, (ask, _) in enumerate(ask_q):
            if need <= 0 or ask.price > bid.price:
                break
            take = min(need, remaining[k])
            if take <= 0:
                continue
            remaining[k] -= take
            need -= take
            matches.append(Match(ask, bid, take, 0.5 * (ask.price + bid.price)))
        if need > 0:
            bid_left.append((bid, need))
    unmatched = [replace(a, qty_kw=r) for (a, _), r in zip(ask_q, remaining) if r > 0]
    unmatched += [replace(b, qty_kw=r) for b, r in bid_left]
    return MatchResult(matches, unmatched)


def split_book(orders: Iterable[Order]) -> tuple[list[Order], list[Order]]:
    orders = list(orders)
    return [o for o in orders if o.side == "ask"], [o for o in orders if o.side == "bid"]


def read_orders(path: str | Path) -> list[Order]:
    """Orders CSV with columns side, peer, bus, phase, qty_kw, price, slot."""
    path = Path(path)
    if not path.is_file():
        raise MarketError(f"orders file not found: {path}")
    with path.open(newline="") as fh:
        return parse_orders(fh.read(), str(path))


def parse_orders(text: str, source: str = "<orders>") -> list[Order]:
    rows = csv.DictReader(io.StringIO(text))
    need = {"side", "peer", "bus", "phase", "qty_kw", "price"}
    if rows.fieldnames is None or not need <= set(rows.fieldnames):
        raise MarketError(f"{source}: columns must include {sorted(need)}")
    out = []
    for n, r in enumerate(rows, start=2):
        try:
            out.append(Order(r["side"].strip().lower(), r["peer"].strip(), int(r["bus"]),
                             r["phase"].strip().lower(), float(r["qty_kw"]), float(r["price"]),
                             int(r.get("slot") or 0)))
        except (ValueError, TypeError) as exc:
            raise MarketError(f"{source} line {n}: {exc}") from None
    return out


# --------------------------------------------------------------------------

@dataclass
class SessionReport:
    slot: int
    matches: list[Match]
    unmatched: list[Order]
    status: str
    verdicts: list[str]
    accepted_kw: np.ndarray
    binding: list[str]
    tlc_producer_kw: np.ndarray
    tlc_consumer_kw: np.ndarray
    loss_fee_producer: np.ndarray
    loss_fee_consumer: np.ndarray
    incremental_loss_kw: float
    slot_hours: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [f"{m.ask.peer}->{m.bid.peer}" for m in self.matches]

    def payments(self) -> np.ndarray:
        """Energy payment per trade, identical for buyer and seller."""
        prices = np.array([m.price for m in self.matches])
        return self.accepted_kw * prices * self.slot_hours

    def to_dict(self) -> dict:
        pay = self.payments() if self.matches else np.zeros(0)
        trades = []
        for k, m in enumerate(self.matches):
            trades.append({
                "trade": self.labels[k],
                "seller": m.ask.peer, "producer": f"{m.ask.bus}{m.ask.phase}",
                "buyer": m.bid.peer, "consumer": f"{m.bid.bus}{m.bid.phase}",
                "negotiated_kw": _num(m.qty_kw),
                "clearing_price": _num(m.price),
                "verdict": self.verdicts[k],
                "accepted_kw": _num(self.accepted_kw[k]),
                "payment": _num(pay[k]),
                "tlc_producer_kw": _num(self.tlc_producer_kw[k]),
                "tlc_consumer_kw": _num(self.tlc_consumer_kw[k]),
                "loss_fee_seller": _num(self.loss_fee_producer[k]),
                "loss_fee_buyer": _num(self.loss_fee_consumer[k]),
            })
        return {
            "slot": self.slot,
            "status": self.status,
            "meta": self.meta,
            "trades": trades,
            "binding": list(self.binding),
            "incremental_loss_kw": _num(self.incremental_loss_kw),
            "unmatched": [
                {"side": o.side, "peer": o.peer, "bus": o.bus, "phase": o.phase,
                 "qty_kw": _num(o.qty_kw), "price": _num(o.price)}
                for o in self.unmatched
            ],
        }

    def to_json(self) -> str:
        import json
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        cols = ["trade", "producer", "consumer", "negotiated_kw", "clearing_price", "verdict",
                "accepted_kw", "payment", "tlc_producer_kw", "tlc_consumer_kw",
                "loss_fee_seller", "loss_fee_buyer"]
        w.writerow(cols)
        for t in self.to_dict()["trades"]:
            w.writerow([_fmt(t[c]) for c in cols])
        return out.getvalue()


def _num(x: float):
    """Round to 9 significant digits so serialized output is stable."""
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.9g}") + 0.0


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def run_session(config) -> SessionReport:
    """Base case -> sensitivities -> matching -> vetting -> loss fees."""
    from .basecase import prepare_base_case
    from .evaluator import vet_block
    from .lossalloc import transaction_loss_coefficients
    from .netmodel import load_grid

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except SessionError:
            raise
        except (ValueError, RuntimeError, KeyError, OSError, ZeroDivisionError) as exc:
            raise SessionError(name, str(exc)) from exc

    grid = stage("grid", load_grid, config.grid)
    orders = list(config.orders) if config.orders is not None else stage("orders", read_orders,
                                                                         config.orders_file)
    for o in orders:
        if not grid.has_bus(o.bus):
            raise SessionError("orders", f"order names unknown bus {o.bus}: {o.describe()}")
        if o.bus == grid.slack_id:
            raise SessionError("orders", f"the slack bus cannot trade: {o.describe()}")
    slots = sorted({o.slot for o in orders})
    if len(slots) > 1:
        raise SessionError("orders", f"orders span several slots: {slots}")
    slot = slots[0] if slots else config.slot
    meta = {"grid": grid.name, "mode": "session", "limits": config.limits_dict()}

    asks, bids = split_book(orders)
    result = stage("matching", match_orders, asks, bids)
    n = len(result.matches)
    empty = np.zeros(n)
    if n == 0:
        return SessionReport(slot, [], result.unmatched, "empty", [], empty, [], empty, empty,
                             empty, empty, 0.0, config.slot_hours, meta)

    base = stage("basecase", prepare_base_case, grid, config.scaling, config.s_base_kva,
                 config.v_base_kv)
    block = result.trade_block()
    ev = stage("vetting", vet_block, base, block, config.limits, tol=config.tol)
    if ev.status != "optimal":
        raise SessionError("vetting", f"solver status {ev.status}")
    tlc = stage("lossalloc", transaction_loss_coefficients, base, block, ev.quantities_kw)
    k = config.loss_price * config.slot_hours
    return SessionReport(slot, result.matches, result.unmatched, ev.status, list(ev.verdicts),
                         ev.quantities_kw, ev.binding, tlc.producer_kw, tlc.consumer_kw,
                         k * tlc.producer_kw, k * tlc.consumer_kw, tlc.incremental_loss_kw,
                         config.slot_hours, meta)
