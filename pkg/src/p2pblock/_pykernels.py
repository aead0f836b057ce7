"""NumPy implementations of the power-flow kernels (fallback backend).

Admittances are passed in polar form, ``ymag[i, j] = |Y_ij|`` and
``yang[i, j] = angle(Y_ij)``, matching the element formulas used by the
compiled backend.
"""
import numpy as np


def power_injections(vm, va, ymag, yang):
    """Computed nodal injections P_i, Q_i for all buses."""
    ang = yang - va[:, None] + va[None, :]
    m = ymag * vm[None, :]
    p = vm * np.sum(m * np.cos(ang), axis=1)
    q = -vm * np.sum(m * np.sin(ang), axis=1)
    return p, q


def jacobian_blocks(vm, va, ymag, yang, idx):
    """Polar Jacobian blocks (dP/d|V|, dP/dδ, dQ/d|V|, dQ/dδ) restricted to ``idx``."""
    n = vm.shape[0]
    ang = yang - va[:, None] + va[None, :]
    cos_a = np.cos(ang)
    sin_a = np.sin(ang)
    off = ~np.eye(n, dtype=bool)
    vv = vm[:, None] * vm[None, :] * ymag

    pv = vm[:, None] * ymag * cos_a
    qv = -vm[:, None] * ymag * sin_a
    pd = -vv * sin_a
    qd = -vv * cos_a

    diag_y = np.diag(ymag)
    diag_t = np.diag(yang)
    sum_c = np.sum(np.where(off, ymag * vm[None, :] * cos_a, 0.0), axis=1)
    sum_s = np.sum(np.where(off, ymag * vm[None, :] * sin_a, 0.0), axis=1)
    np.fill_diagonal(pv, 2.0 * vm * diag_y * np.cos(diag_t) + sum_c)
    np.fill_diagonal(qv, -2.0 * vm * diag_y * np.sin(diag_t) - sum_s)
    np.fill_diagonal(pd, vm * sum_s)
    np.fill_diagonal(qd, vm * sum_c)

    sel = np.ix_(idx, idx)
    return pv[sel], pd[sel], qv[sel], qd[sel]
