import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2pblock.config import SessionConfig
from p2pblock.market import (
    MarketError,
    Order,
    SessionError,
    match_orders,
    parse_orders,
    run_session,
    split_book,
)

PRICES = (1.0, 2.0, 3.0)
QTYS = (1.0, 2.0, 3.0)


def ask(peer, qty, price, bus=None, slot=0):
    return Order("ask", peer, bus or 2 + int(peer[1:]), "a", qty, price, slot)


def bid(peer, qty, price, bus=None, slot=0):
    return Order("bid", peer, bus or 20 + int(peer[1:]), "b", qty, price, slot)


def exhaustive_max(asks, bids):
    """Best integer allocation over every compatible pair, by enumeration."""
    pairs = [(i, j) for i, a in enumerate(asks) for j, b in enumerate(bids) if a.price <= b.price]

    @lru_cache(maxsize=None)
    def best(k, cap_a, cap_b):
        if k == len(pairs):
            return 0
        i, j = pairs[k]
        out = 0
        for x in range(int(min(cap_a[i], cap_b[j])) + 1):
            ca = cap_a[:i] + (cap_a[i] - x,) + cap_a[i + 1:]
            cb = cap_b[:j] + (cap_b[j] - x,) + cap_b[j + 1:]
            out = max(out, x + best(k + 1, ca, cb))
        return out

    return best(0, tuple(int(a.qty_kw) for a in asks), tuple(int(b.qty_kw) for b in bids))


def min_cut(asks, bids):
    """Smallest cut: bids left out pay their quantity, asks reachable from the rest pay theirs."""
    best = float("inf")
    for r in range(len(bids) + 1):
        for kept in itertools.combinations(range(len(bids)), r):
            out = sum(b.qty_kw for j, b in enumerate(bids) if j not in kept)
            reach = {i for i, a in enumerate(asks) for j in kept if a.price <= bids[j].price}
            best = min(best, out + sum(asks[i].qty_kw for i in reach))
    return best


books = st.integers(1, 5).flatmap(lambda na: st.tuples(
    st.lists(st.tuples(st.sampled_from(QTYS), st.sampled_from(PRICES)), min_size=na, max_size=na),
    st.lists(st.tuples(st.sampled_from(QTYS), st.sampled_from(PRICES)),
             min_size=1, max_size=6 - na),
))


def build(book):
    a_raw, b_raw = book
    asks = [ask(f"S{k}", q, p) for k, (q, p) in enumerate(a_raw)]
    bids = [bid(f"B{k}", q, p) for k, (q, p) in enumerate(b_raw)]
    return asks, bids


def test_midpoint_example():
    r = match_orders([ask("S1", 10, 0.10)], [bid("B1", 10, 0.12)])
    assert len(r.matches) == 1
    m = r.matches[0]
    assert m.qty_kw == 10 and m.price == pytest.approx(0.11)
    assert r.unmatched == []


def test_no_cross():
    r = match_orders([ask("S1", 5, 0.2)], [bid("B1", 5, 0.1)])
    assert r.matches == [] and len(r.unmatched) == 2


def test_greedy_counterexample():
    # filling the dearest bid first strands the cheap one
    asks = [ask("S1", 1, 0.10), ask("S2", 1, 0.20)]
    bids = [bid("B1", 1, 0.25), bid("B2", 1, 0.15)]
    r = match_orders(asks, bids)
    assert r.matched_kw == 2
    pairs = {(m.ask.peer, m.bid.peer) for m in r.matches}
    assert pairs == {("S1", "B2"), ("S2", "B1")}


@settings(max_examples=300, deadline=None)
@given(books)
def test_matches_exhaustive_search(book):
    asks, bids = build(book)
    r = match_orders(asks, bids)
    assert r.matched_kw == exhaustive_max(asks, bids) == min_cut(asks, bids)


def test_all_small_books_of_two_by_two():
    for a1, a2, b1, b2 in itertools.product(itertools.product(QTYS, PRICES), repeat=4):
        asks = [ask("S1", *a1), ask("S2", *a2)]
        bids = [bid("B1", *b1), bid("B2", *b2)]
        assert match_orders(asks, bids).matched_kw == exhaustive_max(asks, bids)


@settings(max_examples=200, deadline=None)
@given(books)
def test_match_invariants(book):
    asks, bids = build(book)
    r = match_orders(asks, bids)
    for m in r.matches:
        assert m.bid.price >= m.ask.price
        assert m.ask.price <= m.price <= m.bid.price
        assert m.qty_kw > 0
    for o in asks + bids:
        side = "ask" if o.side == "ask" else "bid"
        done = sum(m.qty_kw for m in r.matches if getattr(m, side) == o)
        left = sum(u.qty_kw for u in r.unmatched if (u.side, u.peer) == (o.side, o.peer))
        assert done + left == pytest.approx(o.qty_kw)
    # what a buyer pays equals what the seller receives
    paid = sum(sum(m.qty_kw * m.price for m in r.matches if m.bid == b) for b in bids)
    got = sum(sum(m.qty_kw * m.price for m in r.matches if m.ask == a) for a in asks)
    assert paid == pytest.approx(got)
    # nothing left that could still cross
    left_a = [u for u in r.unmatched if u.side == "ask"]
    left_b = [u for u in r.unmatched if u.side == "bid"]
    assert not any(a.price <= b.price for a in left_a for b in left_b)


@settings(max_examples=100, deadline=None)
@given(books, st.randoms())
def test_order_independent(book, rnd):
    asks, bids = build(book)
    r1 = match_orders(asks, bids)
    rnd.shuffle(asks)
    rnd.shuffle(bids)
    r2 = match_orders(asks, bids)
    assert r1 == r2


def test_book_checks():
    with pytest.raises(MarketError):
        match_orders([ask("S1", 1, 1, slot=0)], [bid("B1", 1, 1, slot=1)])
    with pytest.raises(MarketError):
        match_orders([ask("S1", 1, 1)], [Order("bid", "S1", 30, "a", 1, 2)])
    with pytest.raises(MarketError):
        match_orders([ask("S1", 1, 1, bus=5)], [Order("bid", "B1", 5, "a", 1, 2)])
    with pytest.raises(MarketError):
        match_orders([bid("B1", 1, 1)], [])
    with pytest.raises(MarketError):
        Order("ask", "S", 5, "a", 0.0, 1.0)
    with pytest.raises(MarketError):
        Order("ask", "S", 5, "a", 1.0, -1.0)
    with pytest.raises(MarketError):
        Order("sell", "S", 5, "a", 1.0, 1.0)
    with pytest.raises(MarketError):
        Order("ask", "S", 5, "q", 1.0, 1.0)


def test_parse_orders():
    orders = parse_orders("side,peer,bus,phase,qty_kw,price\nask,P1,5,A,3,0.1\nbid,C1,6,b,2,0.2\n")
    asks, bids = split_book(orders)
    assert asks == [Order("ask", "P1", 5, "a", 3.0, 0.1)]
    assert bids == [Order("bid", "C1", 6, "b", 2.0, 0.2)]
    with pytest.raises(MarketError, match="columns"):
        parse_orders("side,peer\nask,P1\n")
    with pytest.raises(MarketError, match="line 2"):
        parse_orders("side,peer,bus,phase,qty_kw,price\nask,P1,x,a,3,0.1\n")


def test_session_empty_book():
    cfg = SessionConfig(orders=[ask("S1", 5, 0.3)])
    rep = run_session(cfg)
    assert rep.status == "empty" and rep.matches == []
    assert len(rep.unmatched) == 1


def test_session_unknown_bus():
    cfg = SessionConfig(orders=[ask("S1", 5, 0.1, bus=99), bid("B1", 5, 0.2)])
    with pytest.raises(SessionError) as exc:
        run_session(cfg)
    assert exc.value.stage == "orders"
    assert "bus 99" in str(exc.value) and "peer=S1" in str(exc.value)


def test_session_slack_bus():
    cfg = SessionConfig(orders=[ask("S1", 5, 0.1, bus=1), bid("B1", 5, 0.2)])
    with pytest.raises(SessionError, match="slack"):
        run_session(cfg)


def test_session_settlement():
    cfg = SessionConfig(orders=[ask("S1", 10, 0.10, bus=5), bid("B1", 10, 0.12, bus=24)],
                        loss_price=0.3, slot_hours=0.5, alpha_pct=1.0)
    rep = run_session(cfg)
    assert rep.verdicts == ["accepted"]
    assert rep.payments()[0] == pytest.approx(10 * 0.11 * 0.5)
    assert rep.loss_fee_producer[0] == pytest.approx(0.3 * 0.5 * rep.tlc_producer_kw[0])
    fees = rep.tlc_producer_kw.sum() + rep.tlc_consumer_kw.sum()
    assert fees == pytest.approx(2 * rep.incremental_loss_kw, rel=1e-9)


def test_session_deterministic():
    orders = [ask("S1", 10, 0.10, bus=5), ask("S2", 4, 0.12, bus=7),
              bid("B1", 10, 0.15, bus=24), bid("B2", 4, 0.17, bus=17)]
    a = run_session(SessionConfig(orders=orders)).to_json()
    b = run_session(SessionConfig(orders=list(reversed(orders)))).to_json()
    assert a == b
