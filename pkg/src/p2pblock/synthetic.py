"""Random radial feeders for testing and benchmarking."""
from __future__ import annotations

import numpy as np

from .netmodel import Bases, Bus, GridModel, Line


def random_radial_grid(n_bus: int, rng: np.random.Generator | int | None = None, *,
                       per_unit: bool = True, load_pu: float = 0.02, z_pu: float = 0.01,
                       unbalance: float = 0.2) -> GridModel:
    """Random tree on ``n_bus`` buses, slack at bus 1, light per-phase loads.

    Each new bus attaches to a uniformly chosen earlier bus. Loads and
    impedances are drawn around ``load_pu`` and ``z_pu``; per-phase loads vary
    by up to ``unbalance`` relative.
    """
    if n_bus < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(rng)
    lines = []
    for k in range(2, n_bus + 1):
        parent = int(rng.integers(1, k))
        r = z_pu * rng.uniform(0.3, 1.5)
        x = r * rng.uniform(0.3, 1.2)
        lines.append(Line(parent, k, r, x))
    buses = [Bus(1, (0.0,) * 3, (0.0,) * 3)]
    for k in range(2, n_bus + 1):
        p = load_pu * rng.uniform(0.2, 1.5)
        f = 1.0 + unbalance * rng.uniform(-1.0, 1.0, 3)
        pf = rng.uniform(0.2, 0.6)
        buses.append(Bus(k, tuple(float(v) for v in p * f), tuple(float(v) for v in p * pf * f)))
    bases = Bases(100.0, 0.4) if per_unit else None
    return GridModel(tuple(buses), tuple(lines), 1, bases, f"random-{n_bus}")
