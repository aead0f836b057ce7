"""Primal-dual interior-point method for linear + second-order cone programs.

Works on the standard form

    minimize c'x  s.t.  G x + s = h,  A x = b,  s in K

with K a product of a nonnegative orthant and second-order cones, using a
homogeneous self-dual embedding, Nesterov-Todd scaling and a Mehrotra
predictor-corrector. Linear systems are reduced to the normal equations
over x (programs here have few variables and many cone rows).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .program import ConicProgram, ConicSolution


class SolverError(RuntimeError):
    """Numerical breakdown inside the interior-point iteration."""


STEP_FRACTION = 0.99
_PRESOLVE_TOL = 1e-12


# --------------------------------------------------------------------------
# cone algebra; ``dims`` = (l, [q1, q2, ...])

def _blocks(dims):
    l, qs = dims
    start = l
    for q in qs:
        yield slice(start, start + q)
        start += q


def _identity(dims, m):
    e = np.zeros(m)
    e[: dims[0]] = 1.0
    for sl in _blocks(dims):
        e[sl.start] = 1.0
    return e


def _min_eig(u, dims):
    l = dims[0]
    vals = [u[:l].min()] if l else []
    for sl in _blocks(dims):
        vals.append(u[sl.start] - np.linalg.norm(u[sl.start + 1:sl.stop]))
    return min(vals) if vals else 0.0


def _jordan(u, v, dims):
    l = dims[0]
    w = np.empty_like(u)
    w[:l] = u[:l] * v[:l]
    for sl in _blocks(dims):
        a, b = u[sl], v[sl]
        w[sl.start] = a @ b
        w[sl.start + 1:sl.stop] = a[0] * b[1:] + b[0] * a[1:]
    return w


def _jordan_div(lam, d, dims):
    """Solve lam o x = d."""
    l = dims[0]
    x = np.empty_like(d)
    x[:l] = d[:l] / lam[:l]
    for sl in _blocks(dims):
        a, b = lam[sl], d[sl]
        det = a[0] ** 2 - a[1:] @ a[1:]
        x0 = (a[0] * b[0] - a[1:] @ b[1:]) / det
        x[sl.start] = x0
        x[sl.start + 1:sl.stop] = (b[1:] - x0 * a[1:]) / a[0]
    return x


def _max_step(u, du, dims):
    """Largest alpha with u + alpha du in K (inf when unbounded); u interior."""
    l = dims[0]
    t = 0.0
    if l:
        t = max(t, float(np.max(-du[:l] / u[:l])))
    for sl in _blocks(dims):
        x, d = u[sl], du[sl]
        nrm = np.sqrt(max(x[0] ** 2 - x[1:] @ x[1:], 1e-300))
        xb, db = x / nrm, d / nrm
        r0 = xb[0] * db[0] - xb[1:] @ db[1:]
        r1 = db[1:] - ((r0 + db[0]) / (xb[0] + 1.0)) * xb[1:]
        t = max(t, float(np.linalg.norm(r1) - r0))
    return np.inf if t <= 0 else 1.0 / t


@dataclass
class _Scaling:
    """Block-diagonal NT scaling W with W z = W^-1 s = lam."""

    dims: tuple
    d: np.ndarray           # orthant part: sqrt(s/z)
    beta: list[float]
    v: list[np.ndarray]

    @classmethod
    def compute(cls, s, z, dims):
        l = dims[0]
        d = np.sqrt(s[:l] / z[:l])
        betas, vs = [], []
        for sl in _blocks(dims):
            ss, zz = s[sl], z[sl]
            sn = np.sqrt(ss[0] ** 2 - ss[1:] @ ss[1:])
            zn = np.sqrt(zz[0] ** 2 - zz[1:] @ zz[1:])
            sb, zb = ss / sn, zz / zn
            gamma = np.sqrt((1.0 + sb @ zb) / 2.0)
            wb = sb.copy()
            wb[0] += zb[0]
            wb[1:] -= zb[1:]
            wb /= 2.0 * gamma
            v = wb.copy()
            v[0] += 1.0
            v /= np.sqrt(2.0 * (wb[0] + 1.0))
            betas.append(float(np.sqrt(sn / zn)))
            vs.append(v)
        return cls(dims, d, betas, vs)

    def apply(self, u, inverse=False):
        """W u (or W^-1 u); u may be a vector or a matrix with rows in cone order."""
        out = np.empty_like(u)
        l = self.dims[0]
        if inverse:
            out[:l] = (u[:l].T / self.d).T
        else:
            out[:l] = (u[:l].T * self.d).T
        for sl, beta, v in zip(_blocks(self.dims), self.beta, self.v):
            blk = u[sl]
            if inverse:
                # W^-1 = (2 J v v' J - J) / beta
                jv = v.copy()
                jv[1:] = -jv[1:]
                t = 2.0 * np.outer(jv, jv @ blk) if blk.ndim == 2 else 2.0 * jv * (jv @ blk)
                jb = blk.copy()
                jb[1:] = -jb[1:]
                out[sl] = (t - jb) / beta
            else:
                t = 2.0 * np.outer(v, v @ blk) if blk.ndim == 2 else 2.0 * v * (v @ blk)
                jb = blk.copy()
                jb[1:] = -jb[1:]
                out[sl] = beta * (t - jb)
        return out


class _KKT:
    """Factorized reduced system for
        A'uy + G'uz = bx,  A ux = by,  G ux - W'W uz = bz."""

    def __init__(self, G, A, scaling: _Scaling | None):
        self.G, self.A, self.W = G, A, scaling
        n, p = G.shape[1], A.shape[0]
        gs = G if scaling is None else scaling.apply(G, inverse=True)
        self.gs = gs
        k = np.zeros((n + p, n + p))
        k[:n, :n] = gs.T @ gs
        k[:n, n:] = A.T
        k[n:, :n] = A
        self.n, self.p = n, p
        try:
            self.lu = sla.lu_factor(k, check_finite=True)
        except (ValueError, sla.LinAlgError) as exc:
            raise SolverError(f"KKT factorization failed: {exc}") from None
        if np.any(np.diag(self.lu[0]) == 0.0):
            raise SolverError("singular KKT system (rank-deficient constraints)")

    def _winv(self, u):
        return u if self.W is None else self.W.apply(u, inverse=True)

    def solve(self, bx, by, bz):
        wbz = self._winv(bz)
        rhs = np.concatenate([bx + self.gs.T @ wbz, by])
        sol = sla.lu_solve(self.lu, rhs)
        ux, uy = sol[: self.n], sol[self.n:]
        uz = self._winv(self.gs @ ux - wbz)
        # one step of iterative refinement against the unreduced equations
        rx = bx - self.A.T @ uy - self.G.T @ uz
        ry = by - self.A @ ux
        wz = uz if self.W is None else self.W.apply(self.W.apply(uz))
        rz = bz - (self.G @ ux - wz)
        if max(np.abs(rx).max(initial=0), np.abs(ry).max(initial=0), np.abs(rz).max(initial=0)) > 0:
            wrz = self._winv(rz)
            sol2 = sla.lu_solve(self.lu, np.concatenate([rx + self.gs.T @ wrz, ry]))
            ux = ux + sol2[: self.n]
            uy = uy + sol2[self.n:]
            uz = uz + self._winv(self.gs @ sol2[: self.n] - wrz)
        return ux, uy, uz


def conelp(c, G, h, A, b, dims, tol=1e-8, max_iter=200):
    """Solve the standard-form cone LP. Returns a dict with status and iterates."""
    n = c.shape[0]
    m = G.shape[0]
    nu = dims[0] + len(dims[1])
    e = _identity(dims, m)
    resx0 = max(1.0, np.linalg.norm(c, np.inf))
    resy0 = max(1.0, np.linalg.norm(b, np.inf) if b.size else 0.0)
    resz0 = max(1.0, np.linalg.norm(h, np.inf) if h.size else 0.0)

    kkt0 = _KKT(G, A, None)
    x, y, zt = kkt0.solve(np.zeros(n), b, h)
    s = -zt
    _, y, z = kkt0.solve(-c, np.zeros(A.shape[0]), np.zeros(m))
    for u in (s, z):
        shift = -_min_eig(u, dims) if m else -1.0
        if shift >= -1e-8 * max(np.linalg.norm(u), 1.0):
            u += (1.0 + shift) * e
    tau, kappa = 1.0, 1.0

    status = "max-iterations"
    cert = None
    it = 0
    info = {}
    for it in range(max_iter + 1):
        rx = A.T @ y + G.T @ z + c * tau
        ry = b * tau - A @ x
        rz = s + G @ x - h * tau
        cx, by_, hz = c @ x, b @ y, h @ z
        rt = kappa + cx + by_ + hz
        gap_sz = s @ z
        mu = (gap_sz + tau * kappa) / (nu + 1)

        pres = max(np.linalg.norm(ry, np.inf, ) / resy0 if ry.size else 0.0,
                   np.linalg.norm(rz, np.inf) / resz0 if rz.size else 0.0) / tau
        dres = np.linalg.norm(rx, np.inf) / resx0 / tau
        gap = gap_sz / tau**2
        info = dict(pres=pres, dres=dres, gap=gap, pcost=cx / tau, dcost=-(by_ + hz) / tau)

        if pres <= tol and dres <= tol and gap <= tol:
            status = "optimal"
            break
        if by_ + hz < 0:
            hresx = np.linalg.norm(A.T @ y + G.T @ z, np.inf)
            pinf = hresx / resx0 / (-(by_ + hz))
            if pinf <= tol:
                status, cert = "infeasible", pinf
                break
        if cx < 0:
            hres = max(np.linalg.norm(A @ x, np.inf) / resy0 if A.shape[0] else 0.0,
                       np.linalg.norm(G @ x + s, np.inf) / resz0 if m else 0.0)
            dinf = hres / (-cx)
            if dinf <= tol:
                status, cert = "unbounded", dinf
                break
        if it == max_iter:
            break

        W = _Scaling.compute(s, z, dims)
        lam = W.apply(z)
        kkt = _KKT(G, A, W)
        u2x, u2y, u2z = kkt.solve(-c, b, h)
        den = -kappa / tau + c @ u2x + b @ u2y + h @ u2z
        if not np.isfinite(den) or den >= 0:
            raise SolverError("breakdown in homogeneous embedding (non-negative pivot)")

        def direction(eta, ds_rhs, dt_rhs):
            w_l = W.apply(_jordan_div(lam, ds_rhs, dims))
            u1x, u1y, u1z = kkt.solve(-eta * rx, eta * ry, -eta * rz - w_l)
            dtau = (-eta * rt - dt_rhs / tau - (c @ u1x + b @ u1y + h @ u1z)) / den
            dx = u1x + dtau * u2x
            dy = u1y + dtau * u2y
            dz = u1z + dtau * u2z
            ds = w_l - W.apply(W.apply(dz))
            dkappa = (dt_rhs - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def step_to_boundary(dz, ds, dtau, dkappa):
            a = min(_max_step(s, ds, dims), _max_step(z, dz, dims)) if m else np.inf
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        aff = direction(1.0, -_jordan(lam, lam, dims), -tau * kappa)
        a_aff = min(1.0, step_to_boundary(aff[2], aff[3], aff[4], aff[5]))
        sigma = min(1.0, max(0.0, 1.0 - a_aff)) ** 3
        # combined corrector
        corr = _jordan(W.apply(aff[3], inverse=True), W.apply(aff[2]), dims)
        ds_rhs = -_jordan(lam, lam, dims) + sigma * mu * e - corr
        dt_rhs = -tau * kappa + sigma * mu - aff[4] * aff[5]
        dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, ds_rhs, dt_rhs)
        alpha = min(1.0, STEP_FRACTION * step_to_boundary(dz, ds, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 0:
            raise SolverError("zero step length")

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.all(np.isfinite(x)) and np.isfinite(tau)):
            raise SolverError("non-finite iterate")

    if status == "infeasible":
        scale = -(b @ y + h @ z)
        return dict(status=status, x=x * np.nan, y=y / scale, z=z / scale, s=s * np.nan,
                    iterations=it, certificate=cert, **info)
    if status == "unbounded":
        scale = -(c @ x)
        return dict(status=status, x=x / scale, y=y * np.nan, z=z * np.nan, s=s / scale,
                    iterations=it, certificate=cert, **info)
    return dict(status=status, x=x / tau, y=y / tau, z=z / tau, s=s / tau, iterations=it,
                certificate=None, **info)


# --------------------------------------------------------------------------
# ConicProgram <-> standard form

@dataclass
class _Layout:
    lin_src: list      # ('in', k) / ('lo', i) / ('hi', i) per kept orthant row
    cone_src: list     # original cone index per kept cone
    eq_rows: np.ndarray
    const_cones: list  # original cone indices dropped as constant


def _standard_form(prog: ConicProgram):
    n = prog.n
    g_rows, h_vals, lin_src = [], [], []
    a_rows, b_vals = [list(r) for r in prog.a_eq], list(prog.b_eq)
    infeasible = False

    def add_lin(row, rhs, src):
        nonlocal infeasible
        if np.all(np.abs(row) <= _PRESOLVE_TOL):
            if rhs < -_PRESOLVE_TOL:
                infeasible = True
            return
        g_rows.append(row)
        h_vals.append(rhs)
        lin_src.append(src)

    for k in range(len(prog.b_in)):
        add_lin(prog.a_in[k], prog.b_in[k], ("in", k))
    for i in range(n):
        lo, hi = prog.lo[i], prog.hi[i]
        if np.isfinite(lo) and np.isfinite(hi) and lo == hi:
            row = np.zeros(n)
            row[i] = 1.0
            a_rows.append(row)
            b_vals.append(lo)
            continue
        if np.isfinite(hi):
            row = np.zeros(n)
            row[i] = 1.0
            add_lin(row, hi, ("hi", i))
        if np.isfinite(lo):
            row = np.zeros(n)
            row[i] = -1.0
            add_lin(row, -lo, ("lo", i))

    q_blocks, q_h, q_sizes, cone_src, const_cones = [], [], [], [], []
    for k, cone in enumerate(prog.cones):
        if np.all(np.abs(cone.G) <= _PRESOLVE_TOL) and np.all(np.abs(cone.d) <= _PRESOLVE_TOL):
            if np.linalg.norm(cone.h) > cone.e + _PRESOLVE_TOL:
                infeasible = True
            const_cones.append(k)
            continue
        q_blocks.append(np.vstack([-cone.d[None, :], -cone.G]))
        q_h.append(np.concatenate([[cone.e], cone.h]))
        q_sizes.append(cone.G.shape[0] + 1)
        cone_src.append(k)

    l = len(g_rows)
    G = np.vstack([np.array(g_rows).reshape(l, n)] + q_blocks) if (l or q_blocks) else np.zeros((0, n))
    h = np.concatenate([np.array(h_vals, dtype=float)] + q_h) if (l or q_h) else np.zeros(0)

    A = np.array(a_rows, dtype=float).reshape(len(a_rows), n)
    b = np.array(b_vals, dtype=float)
    keep = np.arange(len(b))
    nz = ~np.all(np.abs(A) <= _PRESOLVE_TOL, axis=1)
    if np.any(np.abs(b[~nz]) > _PRESOLVE_TOL):
        infeasible = True
    A, b, keep = A[nz], b[nz], keep[nz]
    if A.shape[0]:
        # drop linearly dependent equality rows
        _, r, piv = sla.qr(A.T, pivoting=True, mode="economic")
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > 1e-10 * max(diag.max(), 1.0)))
        sel = np.sort(piv[:rank])
        dropped = np.setdiff1d(np.arange(A.shape[0]), sel)
        if dropped.size:
            sol, *_ = np.linalg.lstsq(A[sel], b[sel], rcond=None)
            if np.max(np.abs(A[dropped] @ sol - b[dropped])) > 1e-9 * max(1.0, np.abs(b).max()):
                infeasible = True
        A, b, keep = A[sel], b[sel], keep[sel]
    layout = _Layout(lin_src, cone_src, keep, const_cones)
    return G, h, A, b, (l, q_sizes), layout, infeasible


def _empty_solution(prog: ConicProgram, status: str, backend: str = "ipm") -> ConicSolution:
    n = prog.n
    nan = np.full(n, np.nan)
    return ConicSolution(
        status=status, x=nan, objective=np.nan, primal_residual=np.nan, dual_residual=np.nan,
        gap=np.nan, iterations=0, eq_dual=np.full(len(prog.b_eq), np.nan),
        in_slack=np.full(len(prog.b_in), np.nan), in_dual=np.full(len(prog.b_in), np.nan),
        lo_slack=nan.copy(), hi_slack=nan.copy(), cone_slack=np.full(len(prog.cones), np.nan),
        cone_dual=[np.full(c.G.shape[0] + 1, np.nan) for c in prog.cones], backend=backend,
    )


def solution_from_x(prog: ConicProgram, status: str, x: np.ndarray, **extra) -> ConicSolution:
    """Fill slack fields from a primal point; duals default to zero."""
    in_slack = prog.b_in - prog.a_in @ x if len(prog.b_in) else np.zeros(0)
    fields = dict(
        status=status, x=x, objective=prog.objective(x),
        primal_residual=prog.max_violation(x), dual_residual=np.nan, gap=np.nan, iterations=0,
        eq_dual=np.zeros(len(prog.b_eq)), in_slack=in_slack, in_dual=np.zeros(len(prog.b_in)),
        lo_slack=x - prog.lo, hi_slack=prog.hi - x,
        cone_slack=np.array([cone.slack(x) for cone in prog.cones]),
        cone_dual=[np.zeros(c.G.shape[0] + 1) for c in prog.cones],
    )
    fields.update(extra)
    return ConicSolution(**fields)


def solve_ipm(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    G, h, A, b, dims, layout, infeasible = _standard_form(prog)
    if infeasible:
        sol = _empty_solution(prog, "infeasible")
        sol.certificate_residual = 0.0
        return sol
    if A.shape[0] > prog.n:
        raise SolverError("more independent equalities than variables")
    res = conelp(-prog.c, G, h, A, b, dims, tol=tol, max_iter=max_iter)
    if res["status"] in ("infeasible", "unbounded"):
        sol = _empty_solution(prog, res["status"])
        if res["status"] == "unbounded":
            sol.x = res["x"]
        sol.iterations = res["iterations"]
        sol.certificate_residual = float(res["certificate"])
        return sol

    x, z, y = res["x"], res["z"], res["y"]
    l = dims[0]
    in_dual = np.zeros(len(prog.b_in))
    lo_dual = np.zeros(prog.n)
    hi_dual = np.zeros(prog.n)
    for k, (kind, idx) in enumerate(layout.lin_src):
        {"in": in_dual, "lo": lo_dual, "hi": hi_dual}[kind][idx] = z[k]
    cone_dual = [np.zeros(c.G.shape[0] + 1) for c in prog.cones]
    for sl, src in zip(_blocks(dims), layout.cone_src):
        cone_dual[src] = z[sl].copy()
    eq_dual = np.zeros(len(prog.b_eq))
    for val, row in zip(y, layout.eq_rows):
        if row < len(prog.b_eq):
            eq_dual[row] = -val
    return solution_from_x(
        prog, res["status"], x,
        dual_residual=float(res["dres"]), gap=float(res["gap"]), iterations=int(res["iterations"]),
        eq_dual=eq_dual, in_dual=in_dual, cone_dual=cone_dual,
    )
