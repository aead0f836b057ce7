"""Scenario configuration read from an INI file.

Limits are stored in the units the file uses (alpha and current headroom in
percent, voltage deviation and current floor in per-unit) and converted to
fractions only when a :class:`Limits` is built.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .evaluator import Limits
from .netmodel import PhaseScaling, bundled_grid_path

MODES = ("capacity", "vet", "session", "sweep")


class ConfigError(ValueError):
    pass


def parse_alpha(text) -> float | None:
    """Percent value or 'off'."""
    if text is None:
        return None
    s = str(text).strip().lower()
    if s in ("off", "-", "none", "disabled"):
        return None
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"alpha must be a percent or 'off', got {text!r}") from None


@dataclass
class SessionConfig:
    grid: Path = field(default_factory=bundled_grid_path)
    scaling: PhaseScaling = field(default_factory=lambda: PhaseScaling(1.0, 1.2, 0.8))
    s_base_kva: float = 100.0
    v_base_kv: float = 0.4
    alpha_pct: float | None = 2.0
    dv_max_pu: float = 0.05
    di_headroom_pct: float = 30.0
    i_floor_pu: float = 0.01
    orders_file: Path | None = None
    orders: list | None = None
    trades_file: Path | None = None
    mode: str = "session"
    out: Path | None = None
    slot: int = 0
    slot_hours: float = 1.0
    loss_price: float = 0.0
    tol: float = 1e-8

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if not (self.s_base_kva > 0 and self.v_base_kv > 0):
            raise ConfigError("bases must be positive")
        if self.slot_hours <= 0:
            raise ConfigError("slot_hours must be positive")
        try:
            self.limits
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def limits(self) -> Limits:
        return Limits.from_percent(self.alpha_pct, self.dv_max_pu * 100.0, self.di_headroom_pct,
                                   self.i_floor_pu)

    def limits_dict(self) -> dict:
        return {"alpha_pct": "off" if self.alpha_pct is None else self.alpha_pct,
                "dv_max_pu": self.dv_max_pu, "di_headroom_pct": self.di_headroom_pct,
                "i_floor_pu": self.i_floor_pu}

    def update(self, **kw) -> "SessionConfig":
        cfg = replace(self, **{k: v for k, v in kw.items() if v is not None})
        return cfg


def _path(value: str, root: Path) -> Path:
    if value.strip().lower() == "bundled":
        return bundled_grid_path()
    p = Path(value).expanduser()
    return p if p.is_absolute() else (root / p)


def load_config(path: str | Path) -> SessionConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    root = path.parent
    kw: dict = {}
    try:
        if cp.has_section("grid"):
            g = cp["grid"]
            if "path" in g:
                kw["grid"] = _path(g["path"], root)
            if "phase_scaling" in g:
                kw["scaling"] = PhaseScaling.parse(g["phase_scaling"])
            for key in ("s_base_kva", "v_base_kv"):
                if key in g:
                    kw[key] = g.getfloat(key)
        if cp.has_section("limits"):
            s = cp["limits"]
            if "alpha_pct" in s:
                kw["alpha_pct"] = parse_alpha(s["alpha_pct"])
            for key in ("dv_max_pu", "di_headroom_pct", "i_floor_pu"):
                if key in s:
                    kw[key] = s.getfloat(key)
        if cp.has_section("market"):
            m = cp["market"]
            if "orders" in m:
                kw["orders_file"] = _path(m["orders"], root)
            if "trades" in m:
                kw["trades_file"] = _path(m["trades"], root)
            for key in ("slot_hours", "loss_price"):
                if key in m:
                    kw[key] = m.getfloat(key)
            if "slot" in m:
                kw["slot"] = m.getint("slot")
        if cp.has_section("run"):
            r = cp["run"]
            if "mode" in r:
                kw["mode"] = r["mode"].strip()
            if "out" in r:
                kw["out"] = _path(r["out"], root)
            if "tol" in r:
                kw["tol"] = r.getfloat("tol")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return SessionConfig(**kw)
