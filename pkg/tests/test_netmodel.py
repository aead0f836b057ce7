import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2pblock.netmodel import (
    Bases,
    Bus,
    DanglingLineError,
    DuplicateBusError,
    GridFormatError,
    GridModel,
    Line,
    MissingSlackError,
    PhaseScaling,
    TopologyError,
    UnitError,
    grid_from_dict,
    grid_to_dict,
    load_grid,
    parse_grid,
    parse_grid_csv,
    per_unit,
    refer_impedances,
    scale_phase_loads,
    serialize_grid,
    to_physical,
)
from p2pblock.synthetic import random_radial_grid

TWO_BUS = {
    "slack": 1,
    "buses": [{"id": 1, "p_kw": 0, "q_kvar": 0}, {"id": 2, "p_kw": 5, "q_kvar": 2}],
    "lines": [{"from": 1, "to": 2, "r_ohm": 0.05, "x_ohm": 0.02}],
}


def test_bundled_feeder(grid33):
    assert grid33.n_bus == 33
    assert len(grid33.lines) == 32
    assert grid33.bus(7).load("a") == complex(10, 5)
    assert grid33.slack_id == 1
    assert not grid33.is_per_unit


def test_bundled_loads_are_standard_over_20(grid33):
    # values the modified load table does state
    table = {2: (5, 3), 3: (4.5, 2), 4: (6, 4), 7: (10, 5), 11: (2.25, 1.5), 17: (3, 1),
             24: (21, 10), 26: (3, 1.25), 33: (3, 2)}
    for bus, (p, q) in table.items():
        for ph in "abc":
            assert grid33.bus(bus).load(ph) == pytest.approx(complex(p, q))
    # standard bus 29 (120 kW, 70 kVAR) kept
    assert grid33.bus(29).load("a") == pytest.approx(complex(6, 3.5))


def test_two_bus():
    g = parse_grid(json.dumps(TWO_BUS))
    assert g.n_bus == 2 and len(g.lines) == 1 and g.slack_id == 1


def test_duplicate_bus():
    doc = json.loads(json.dumps(TWO_BUS))
    doc["buses"].append({"id": 2, "p_kw": 1})
    with pytest.raises(DuplicateBusError):
        grid_from_dict(doc)


def test_dangling_line():
    doc = json.loads(json.dumps(TWO_BUS))
    doc["lines"][0]["to"] = 9
    with pytest.raises(DanglingLineError):
        grid_from_dict(doc)


def test_mesh_rejected():
    doc = json.loads(json.dumps(TWO_BUS))
    doc["buses"].append({"id": 3, "p_kw": 1})
    doc["lines"] += [{"from": 2, "to": 3, "r_ohm": 0.1, "x_ohm": 0.1},
                     {"from": 1, "to": 3, "r_ohm": 0.1, "x_ohm": 0.1}]
    with pytest.raises(TopologyError):
        grid_from_dict(doc)


def test_disconnected_rejected():
    buses = [Bus(k, (0.0,) * 3, (0.0,) * 3) for k in (1, 2, 3, 4)]
    lines = [Line(1, 2, 0.1, 0.1), Line(3, 4, 0.1, 0.1), Line(2, 1, 0.1, 0.1)]
    with pytest.raises(TopologyError):
        GridModel(tuple(buses), tuple(lines), 1)


def test_missing_slack():
    doc = dict(TWO_BUS, slack=7)
    with pytest.raises(MissingSlackError):
        grid_from_dict(doc)
    doc = {k: v for k, v in TWO_BUS.items() if k != "slack"}
    with pytest.raises(MissingSlackError):
        grid_from_dict(doc)


def test_bad_json_and_missing_keys():
    with pytest.raises(GridFormatError):
        parse_grid("{not json")
    with pytest.raises(GridFormatError):
        grid_from_dict({"slack": 1, "buses": []})


def test_loaded_slack_rejected():
    doc = json.loads(json.dumps(TWO_BUS))
    doc["buses"][0]["p_kw"] = 1
    with pytest.raises(ValueError):
        grid_from_dict(doc)


def test_per_phase_load_forms():
    doc = json.loads(json.dumps(TWO_BUS))
    doc["buses"][1]["p_kw"] = [1, 2, 3]
    doc["buses"][1]["q_kvar"] = {"a": 0.1, "b": 0.2, "c": 0.3}
    g = grid_from_dict(doc)
    assert g.bus(2).p == (1, 2, 3)
    assert g.bus(2).q == (0.1, 0.2, 0.3)


def test_round_trip_bundled(grid33):
    assert parse_grid(serialize_grid(grid33)) == grid33
    pu = per_unit(grid33)
    assert parse_grid(serialize_grid(pu)) == pu


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.booleans())
def test_round_trip_random(n, seed, pu):
    g = random_radial_grid(n, seed, per_unit=pu)
    assert grid_from_dict(json.loads(json.dumps(grid_to_dict(g)))) == g


def test_csv_pair(tmp_path, grid33):
    (tmp_path / "buses.csv").write_text(
        "id,p_kw,q_kvar,slack\n1,0,0,1\n2,5,3,0\n3,2,1,0\n")
    (tmp_path / "lines.csv").write_text("from,to,r_ohm,x_ohm\n1,2,0.01,0.01\n2,3,0.02,0.01\n")
    g = load_grid(tmp_path)
    assert g.n_bus == 3 and g.slack_id == 1 and g.bus(2).load("c") == complex(5, 3)
    assert parse_grid_csv(tmp_path / "buses.csv", tmp_path / "lines.csv") == g


def test_per_unit_values(grid33):
    assert Bases(100, 0.4).z_ohm == pytest.approx(1.6)
    pu = per_unit(grid33, 100, 0.4)
    assert pu.bus(7).p[0] == pytest.approx(0.1)
    assert pu.lines[0].r == pytest.approx(grid33.lines[0].r / 1.6)
    with pytest.raises(UnitError):
        per_unit(grid33, 0, 0.4)
    with pytest.raises(UnitError):
        per_unit(pu)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000), st.floats(1, 1e4), st.floats(0.1, 50))
def test_per_unit_inverse(n, seed, s, v):
    g = random_radial_grid(n, seed, per_unit=False)
    back = to_physical(per_unit(g, s, v))
    for a, b in zip(g.buses, back.buses):
        np.testing.assert_allclose(a.p + a.q, b.p + b.q, rtol=1e-12, atol=0)
    for a, b in zip(g.lines, back.lines):
        np.testing.assert_allclose([a.r, a.x], [b.r, b.x], rtol=1e-12)


def test_phase_scaling(grid33):
    g = scale_phase_loads(grid33, PhaseScaling(1.0, 1.2, 0.8))
    assert g.bus(7).load("b") == pytest.approx(complex(12, 6))
    assert g.bus(7).load("c") == pytest.approx(complex(8, 4))
    assert scale_phase_loads(grid33, PhaseScaling(1, 1, 1)) == grid33
    assert g.lines == grid33.lines
    with pytest.raises(ValueError):
        PhaseScaling(-1, 1, 1)


@settings(max_examples=30, deadline=None)
@given(st.tuples(*[st.floats(0.05, 20)] * 3))
def test_phase_scaling_inverse(f):
    g = random_radial_grid(6, 3, per_unit=False)
    back = scale_phase_loads(scale_phase_loads(g, PhaseScaling(*f)),
                             PhaseScaling(*(1 / x for x in f)))
    for a, b in zip(g.buses, back.buses):
        np.testing.assert_allclose(a.p + a.q, b.p + b.q, rtol=1e-12)


def test_phase_scaling_parse():
    assert PhaseScaling.parse("1,1.2,0.8") == PhaseScaling(1.0, 1.2, 0.8)
    with pytest.raises(ValueError):
        PhaseScaling.parse("1,2")


def test_refer_impedances_keeps_per_unit():
    g = random_radial_grid(5, 1, per_unit=False)
    low = refer_impedances(g, 12.66, 0.4)
    a = per_unit(g, 100, 12.66)
    b = per_unit(low, 100, 0.4)
    for x, y in zip(a.lines, b.lines):
        assert x.r == pytest.approx(y.r, rel=1e-12)
        assert x.x == pytest.approx(y.x, rel=1e-12)
