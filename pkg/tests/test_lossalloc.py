import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from p2pblock.basecase import injected_grid
from p2pblock.evaluator import Limits, TradeBlock, evaluate_capacity, incidence_matrices
from p2pblock.lossalloc import (
    LossAllocError,
    line_loss_gradient,
    linearized_incremental_loss,
    linearized_line_loss,
    total_loss_gradient,
    transaction_loss_coefficients,
)
from p2pblock.netmodel import PHASES
from p2pblock.powerflow import branch_quantities, solve_phase

from conftest import CONSUMERS, PRODUCERS

REFERENCE_KW = [132.0, 51.0, 110.0, 98.0]


def flipped_sign_gradient(base, ln, phase, dp):
    """Loss gradient written out term by term with the B-C cross-term signs flipped."""
    m = base.models[phase]
    pos = {b: k for k, b in enumerate(m.bus_ids)}

    def rows(s, scale):
        out = np.zeros(m.size, dtype=complex)
        for bus, sign in ((ln.from_bus, 1.0), (ln.to_bus, -1.0)):
            if bus in pos:
                k = pos[bus]
                out += sign * scale[k] * s[k] * np.exp(1j * m.va[k])
        return out

    a = rows(m.s_v, np.ones(m.size))
    b = rows(m.s_d, m.vm)
    c, d = a @ dp, b @ dp
    terms = (a.real * c.real + a.imag * c.imag + b.real * d.real + b.imag * d.imag
             - b.real * c.imag + c.real * b.imag - a.real * d.imag + d.real * a.imag)
    return 2 * ln.r / abs(ln.z) ** 2 * terms


def random_dp(base, rng, scale=0.01):
    return rng.normal(scale=scale, size=len(base.node_ids))


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_zero_injection_zero_gradient(base33):
    dp = np.zeros(len(base33.node_ids))
    for ph in PHASES:
        assert not total_loss_gradient(base33, ph, dp).any()
    assert linearized_incremental_loss(base33, {ph: dp for ph in PHASES}) == 0.0


@pytest.mark.parametrize("line", [(1, 2), (6, 26), (17, 18), (3, 23)])
@pytest.mark.parametrize("phase", PHASES)
def test_gradient_matches_fd(base33, rng, line, phase):
    dp = random_dp(base33, rng)
    g = line_loss_gradient(base33, line, phase, dp)
    fd = fd_gradient(lambda x: linearized_line_loss(base33, line, phase, x), dp)
    assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(g))


def test_flipped_cross_terms_fail_fd(base33, rng):
    # with both ends off the slack the flipped cross terms no longer cancel
    dp = random_dp(base33, rng)
    ln = base33.grid.lines[base33.grid.find_line(6, 26)]
    fd = fd_gradient(lambda x: linearized_line_loss(base33, ln, "a", x), dp)
    ours = line_loss_gradient(base33, ln, "a", dp)
    flipped = flipped_sign_gradient(base33, ln, "a", dp)
    scale = np.max(np.abs(fd))
    assert np.max(np.abs(ours - fd)) <= 1e-6 * scale
    assert np.max(np.abs(flipped - fd)) > 1e-4 * scale


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 5.0))
def test_euler_identity(base33, seed, t):
    # the loss is homogeneous of degree 2: grad . dP = 2 loss
    dp = random_dp(base33, np.random.default_rng(seed))
    for ph in PHASES:
        g = total_loss_gradient(base33, ph, dp)
        loss = sum(linearized_line_loss(base33, ln, ph, dp) for ln in base33.grid.lines)
        assert g @ dp == pytest.approx(2 * loss, rel=1e-9)
        scaled = sum(linearized_line_loss(base33, ln, ph, t * dp) for ln in base33.grid.lines)
        assert scaled == pytest.approx(t * t * loss, rel=1e-9)


@pytest.mark.parametrize("cross", [False, True])
def test_tlc_sum_is_twice_loss(base33, cross):
    block = TradeBlock.from_pairs(PRODUCERS, CONSUMERS, "a", "b" if cross else "a")
    rep = transaction_loss_coefficients(base33, block, REFERENCE_KW)
    total = rep.producer_kw.sum() + rep.consumer_kw.sum()
    assert total == pytest.approx(2 * rep.incremental_loss_kw, rel=1e-9)


def test_loss_share_sign_pattern(base33, same_phase_block):
    rep = transaction_loss_coefficients(base33, same_phase_block, REFERENCE_KW)
    tot = rep.total_kw
    assert tot[1] < 0
    assert np.argmax(tot) == 2
    assert np.all(rep.producer_kw > 0)


def test_reference_loss_shares(base33, same_phase_block):
    expect = np.array([[0.0965, 0.3768], [0.0559, -0.2164], [0.6074, 0.0671], [0.0197, 0.4162]])
    rep = transaction_loss_coefficients(base33, same_phase_block, REFERENCE_KW)
    ours = np.column_stack([rep.producer_kw, rep.consumer_kw])
    np.testing.assert_allclose(ours, expect, atol=0.01)


def test_cross_phase_costs_more(base33, same_phase_block, cross_phase_block):
    same = transaction_loss_coefficients(base33, same_phase_block, REFERENCE_KW)
    cross = transaction_loss_coefficients(base33, cross_phase_block, REFERENCE_KW)
    assert np.all(cross.total_kw > same.total_kw)
    assert cross.incremental_loss_kw > same.incremental_loss_kw


def test_tlc_scales_quadratically(base33, same_phase_block):
    q = np.array(REFERENCE_KW)
    one = transaction_loss_coefficients(base33, same_phase_block, q)
    two = transaction_loss_coefficients(base33, same_phase_block, 2 * q)
    np.testing.assert_allclose(two.total_kw, 4 * one.total_kw, rtol=1e-12)


def test_linearized_loss_tracks_power_flow(base33, same_phase_block):
    # loss of the incremental branch currents from a full re-solve
    q_kw = np.array([5.0, 3.0, 4.0, 2.0])
    inc = incidence_matrices(base33, same_phase_block)
    inj = {ph: inc[ph] @ (q_kw / base33.s_base) for ph in PHASES}
    grid = injected_grid(base33, inj)
    exact = 0.0
    for ph in PHASES:
        br = branch_quantities(grid, solve_phase(grid, ph))
        d_i = br.current - base33.branches[ph].current
        exact += sum(ln.r * abs(x) ** 2 for ln, x in zip(base33.grid.lines, d_i))
    lin = linearized_incremental_loss(base33, inj)
    assert lin == pytest.approx(exact, rel=0.15)


def test_tlc_at_capacity(base33, same_phase_block, ref_limits):
    ev = evaluate_capacity(base33, same_phase_block, ref_limits)
    rep = transaction_loss_coefficients(base33, same_phase_block, ev.quantities_kw)
    assert rep.labels == [t.label for t in same_phase_block]
    assert np.isfinite(rep.total_kw).all()


def test_csv(base33, same_phase_block):
    rep = transaction_loss_coefficients(base33, same_phase_block, REFERENCE_KW)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "trade,tlc_producer_kw,tlc_consumer_kw,total_kw"
    assert lines[1].startswith("5a->24a,")
    assert len(lines) == 5


def test_verbose_per_line(base33, same_phase_block):
    rep = transaction_loss_coefficients(base33, same_phase_block, REFERENCE_KW, verbose=True)
    assert len(rep.per_line) == 3 * len(base33.grid.lines)


def test_errors(base33, same_phase_block):
    with pytest.raises(LossAllocError):
        transaction_loss_coefficients(base33, same_phase_block, [1.0, 2.0])
    with pytest.raises(LossAllocError):
        transaction_loss_coefficients(base33, same_phase_block, [1.0, -2.0, 1.0, 1.0])
    with pytest.raises(LossAllocError):
        line_loss_gradient(base33, (5, 30), "a", np.zeros(32))
    with pytest.raises(LossAllocError):
        line_loss_gradient(base33, (1, 2), "a", np.zeros(5))
    with pytest.raises(LossAllocError):
        line_loss_gradient(base33, (1, 2), "d", np.zeros(32))
