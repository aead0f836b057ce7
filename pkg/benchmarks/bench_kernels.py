"""Compare the compiled and pure-Python power-flow kernels.

    python benchmarks/bench_kernels.py [--repeat 50]

Times the injection and Jacobian kernels on the bundled 33-bus feeder and a
random 300-bus tree, plus a full three-phase base-case solve, once per backend.
"""
import argparse
import timeit

import numpy as np

from p2pblock import _pykernels, powerflow
from p2pblock.netmodel import PhaseScaling, bundled_grid, per_unit, scale_phase_loads
from p2pblock.synthetic import random_radial_grid

try:
    from p2pblock import _ckernels
except ImportError:
    _ckernels = None


def _state(grid):
    sol = powerflow.solve_phase(grid, "a")
    y = powerflow.admittance_matrix(grid)
    ymag, yang = np.abs(y), np.angle(y)
    idx = np.array([grid.position(b) for b in grid.non_slack_ids], dtype=np.intp)
    return np.ascontiguousarray(sol.vm), np.ascontiguousarray(sol.va), ymag, yang, idx


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def _solve_all(grid):
    for ph in "abc":
        powerflow.solve_phase(grid, ph)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    grids = {
        "ieee33": per_unit(scale_phase_loads(bundled_grid(), PhaseScaling(1.0, 1.2, 0.8)), 100.0, 0.4),
        "random300": random_radial_grid(300, 7),
    }
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'grid':<10} {'kernel':<12} " + " ".join(f"{name + ' ms':>11}" for name, _ in backends)
          + "   speedup")
    for gname, grid in grids.items():
        vm, va, ymag, yang, idx = _state(grid)
        rows = {
            "injections": lambda m: m.power_injections(vm, va, ymag, yang),
            "jacobian": lambda m: m.jacobian_blocks(vm, va, ymag, yang, idx),
        }
        for kname, call in rows.items():
            t = [_time(lambda m=m: call(m), args.repeat) for _, m in backends]
            sp = f"{t[0] / t[1]:8.1f}x" if len(t) > 1 else "       -"
            print(f"{gname:<10} {kname:<12} " + " ".join(f"{v:11.3f}" for v in t) + "  " + sp)
        t = []
        for _, mod in backends:
            saved = powerflow.kernels.power_injections, powerflow.kernels.jacobian_blocks
            powerflow.kernels.power_injections = mod.power_injections
            powerflow.kernels.jacobian_blocks = mod.jacobian_blocks
            try:
                t.append(_time(lambda: _solve_all(grid), max(3, args.repeat // 10)))
            finally:
                powerflow.kernels.power_injections, powerflow.kernels.jacobian_blocks = saved
        sp = f"{t[0] / t[1]:8.1f}x" if len(t) > 1 else "       -"
        print(f"{gname:<10} {'solve x3':<12} " + " ".join(f"{v:11.3f}" for v in t) + "  " + sp)


if __name__ == "__main__":
    main()
