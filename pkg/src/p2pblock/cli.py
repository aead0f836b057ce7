"""Command-line entry point: ``p2pblock <subcommand> [options]``.

Limits on the command line are given in percent (unbalance, voltage
deviation, current headroom) except the current floor, which is per-unit.
Every numeric output is written with 9 significant digits.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError, SessionConfig, load_config, parse_alpha
from .netmodel import PHASES, PhaseScaling


class CliError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _g(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def _csv(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_g(v) for v in r])
    return out.getvalue()


def _emit(cfg: SessionConfig, files: dict[str, str], primary: str) -> None:
    """Write artifacts into the output directory, or the primary one to stdout."""
    if cfg.out is None:
        sys.stdout.write(files[primary])
        return
    cfg.out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (cfg.out / name).write_text(text)
    print(f"wrote {', '.join(sorted(files))} to {cfg.out}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated bus ids, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=Path, help="grid file (JSON) or directory with buses.csv/lines.csv; "
                        "default: bundled 33-bus feeder")
    common.add_argument("--config", type=Path, help="INI scenario file; flags override its keys")
    common.add_argument("--phase-scaling", metavar="A,B,C",
                        help="per-phase load multipliers (dimensionless), default 1.0,1.2,0.8")
    common.add_argument("--alpha", metavar="PCT", help="voltage unbalance bound in percent, or 'off'")
    common.add_argument("--dv-max", type=float, metavar="PCT",
                        help="voltage magnitude deviation bound in percent of nominal")
    common.add_argument("--di-max", type=float, metavar="PCT",
                        help="line current increment bound in percent of base-case current")
    common.add_argument("--i-floor", type=float, metavar="PU",
                        help="absolute floor of the current increment bound, per-unit")
    common.add_argument("--mode", help="capacity | vet (evaluate); ignored elsewhere")
    common.add_argument("--out", type=Path, help="output directory (default: primary table to stdout)")

    p = argparse.ArgumentParser(prog="p2pblock", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version="p2pblock 0.1.0")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("powerflow", parents=[common], help="solve the base case, per-bus voltages (pu, deg) and VUF (%%)")
    s = sub.add_parser("sensitivity", parents=[common],
                       help="dump dV/dP (pu/pu) and d(angle)/dP (rad/pu) per phase")
    s.add_argument("--phase", choices=PHASES, help="only this phase")

    e = sub.add_parser("evaluate", parents=[common], help="capacity or vetting run for a trade block")
    e.add_argument("--producers", type=_int_list, metavar="IDS", help="producer bus ids, e.g. 5,7,15,19")
    e.add_argument("--consumers", type=_int_list, metavar="IDS", help="consumer bus ids, same length")
    e.add_argument("--producer-phase", default="a", choices=PHASES, help="phase of all producers")
    e.add_argument("--consumer-phase", default="a", choices=PHASES, help="phase of all consumers")
    e.add_argument("--quantities", type=_float_list, metavar="KW", help="negotiated kW per trade (vet mode)")
    e.add_argument("--trades", type=Path, help="trade block CSV instead of --producers/--consumers")
    e.add_argument("--fair-split", action="store_true",
                   help="second pass maximizing the smallest trade at the optimal total (capacity mode)")
    e.add_argument("--physical-check", action="store_true",
                   help="re-solve the power flow at the result and report limit usage")

    a = sub.add_parser("auction", parents=[common], help="match an orders CSV (kW, currency/kWh), no network")
    a.add_argument("--orders", type=Path, help="orders CSV: side,peer,bus,phase,qty_kw,price,slot")

    ss = sub.add_parser("session", parents=[common],
                        help="full auction, DSO vetting and loss fees; writes report.json, report.csv, tlc.csv")
    ss.add_argument("--orders", type=Path, help="orders CSV: side,peer,bus,phase,qty_kw,price,slot")
    ss.add_argument("--loss-price", type=float, metavar="CUR_PER_KWH", help="price of losses, currency/kWh")
    ss.add_argument("--slot-hours", type=float, metavar="H", help="slot length in hours")

    sw = sub.add_parser("sweep", parents=[common], help="frontier of one trade vs the others' total (kW)")
    sw.add_argument("--producers", type=_int_list, metavar="IDS")
    sw.add_argument("--consumers", type=_int_list, metavar="IDS")
    sw.add_argument("--producer-phase", default="a", choices=PHASES)
    sw.add_argument("--consumer-phase", default="a", choices=PHASES)
    sw.add_argument("--trades", type=Path, help="trade block CSV")
    sw.add_argument("--target", type=int, default=0, help="index of the swept trade (0-based)")
    sw.add_argument("--max-total", type=float, metavar="KW",
                    help="largest others' total, kW (default: 1.5x their capacity-optimum total)")
    sw.add_argument("--points", type=int, default=21, help="number of grid points")
    sw.add_argument("--weights", type=_float_list, help="split of the others' total (default: capacity optimum)")
    return p


def _config(args) -> SessionConfig:
    cfg = load_config(args.config) if args.config else SessionConfig()
    kw = {}
    if args.grid is not None:
        kw["grid"] = args.grid
    if args.phase_scaling is not None:
        kw["scaling"] = PhaseScaling.parse(args.phase_scaling)
    if args.alpha is not None:
        cfg.alpha_pct = parse_alpha(args.alpha)
    if args.dv_max is not None:
        kw["dv_max_pu"] = args.dv_max / 100.0
    if args.di_max is not None:
        kw["di_headroom_pct"] = args.di_max
    if args.i_floor is not None:
        kw["i_floor_pu"] = args.i_floor
    if args.out is not None:
        kw["out"] = args.out
    for name in ("orders", "loss_price", "slot_hours"):
        v = getattr(args, name, None)
        if v is not None:
            kw["orders_file" if name == "orders" else name] = v
    cfg = cfg.update(**kw)
    cfg.validate()
    return cfg


def _base(cfg: SessionConfig):
    from .basecase import prepare_base_case
    from .netmodel import load_grid

    try:
        grid = load_grid(cfg.grid)
    except (OSError, ValueError) as exc:
        raise CliError("grid", str(exc)) from exc
    try:
        return prepare_base_case(grid, cfg.scaling, cfg.s_base_kva, cfg.v_base_kv)
    except (ValueError, RuntimeError) as exc:
        raise CliError("powerflow", str(exc)) from exc


def _block(args, cfg: SessionConfig):
    from .evaluator import TradeBlock, read_trade_block

    if args.trades is not None or cfg.trades_file is not None:
        return read_trade_block(args.trades or cfg.trades_file)
    if not args.producers or not args.consumers:
        raise CliError("trades", "give --trades or both --producers and --consumers")
    q = getattr(args, "quantities", None)
    if q is not None and len(q) != len(args.producers):
        raise CliError("trades", "--quantities needs one value per trade")
    return TradeBlock.from_pairs(args.producers, args.consumers, args.producer_phase,
                                 args.consumer_phase, q)


# --------------------------------------------------------------------------
# subcommands

def cmd_powerflow(args, cfg) -> None:
    t0 = time.perf_counter()
    base = _base(cfg)
    elapsed = time.perf_counter() - t0
    v = base.phase_voltages()
    vuf = base.vuf_percent()
    rows = []
    for k, bus in enumerate(base.grid.bus_ids):
        row = [bus]
        for p in range(3):
            row += [float(abs(v[p, k])), float(np.degrees(np.angle(v[p, k])))]
        row.append(float(vuf[k]))
        rows.append(row)
    header = ["bus", "vm_a_pu", "va_a_deg", "vm_b_pu", "va_b_deg", "vm_c_pu", "va_c_deg", "vuf_pct"]
    summary = [[ph, s.iterations, float(s.mismatch), float(base.branches[ph].total_loss * base.s_base),
                float(np.min(s.vm))] for ph, s in base.solutions.items()]
    files = {
        "voltages.csv": _csv(header, rows),
        "summary.csv": _csv(["phase", "iterations", "mismatch_pu", "loss_kw", "vmin_pu"], summary),
    }
    if cfg.out is None:
        sys.stderr.write(files["summary.csv"])
        sys.stderr.write(f"backend {kernels.BACKEND}, {elapsed * 1e3:.3g} ms\n")
    _emit(cfg, files, "voltages.csv")


def cmd_sensitivity(args, cfg) -> None:
    base = _base(cfg)
    files = {}
    phases = [args.phase] if args.phase else list(PHASES)
    ids = base.node_ids
    for ph in phases:
        m = base.models[ph]
        for name, mat in (("s_v", m.s_v), ("s_d", m.s_d)):
            files[f"{name}_{ph}.csv"] = _csv(["bus"] + list(ids),
                                             [[b] + list(map(float, mat[k])) for k, b in enumerate(ids)])
    _emit(cfg, files, f"s_v_{phases[0]}.csv")


def _evaluation_files(cfg, block, ev, check=None) -> dict[str, str]:
    trades = []
    for k, t in enumerate(block):
        trades.append([t.label, f"{t.producer[0]}{t.producer[1]}", f"{t.consumer[0]}{t.consumer[1]}",
                       "" if t.quantity_kw is None else float(t.quantity_kw),
                       float(ev.quantities_kw[k]), (ev.verdicts or [""] * len(block))[k],
                       ev.limiting[k]])
    lim = cfg.limits_dict()
    table = [["{" + ",".join(str(t.producer[0]) for t in block) + "}",
              "{" + ",".join(str(t.consumer[0]) for t in block) + "}",
              "{" + ", ".join(f"{q:.9g}" for q in ev.quantities_kw) + "}",
              lim["alpha_pct"] if lim["alpha_pct"] == "off" else float(lim["alpha_pct"]),
              float(cfg.di_headroom_pct), float(cfg.dv_max_pu * 100.0), ev.total_kw, ev.status,
              ";".join(ev.binding)]]
    files = {
        "trades.csv": _csv(["trade", "producer", "consumer", "negotiated_kw", "q_kw", "verdict",
                            "limiting"], trades),
        "table.csv": _csv(["producers", "consumers", "p_max_kw", "alpha_pct", "di_max_pct",
                           "dv_max_pct", "total_kw", "status", "binding"], table),
    }
    if check is not None:
        files["check.csv"] = _csv(
            ["max_dv_pu", "max_vuf_pct", "max_di_ratio"],
            [[check.max_dv, check.max_vuf_pct, check.max_di_ratio]])
    return files


def cmd_evaluate(args, cfg) -> None:
    from .evaluator import evaluate_capacity, physical_check, vet_block

    mode = args.mode or (cfg.mode if cfg.mode in ("capacity", "vet") else None)
    mode = mode or ("vet" if getattr(args, "quantities", None) else "capacity")
    if mode not in ("capacity", "vet"):
        raise CliError("config", f"evaluate mode must be capacity or vet, got {mode!r}")
    base = _base(cfg)
    block = _block(args, cfg)
    try:
        if mode == "vet":
            ev = vet_block(base, block, cfg.limits, tol=cfg.tol)
        else:
            ev = evaluate_capacity(base, block, cfg.limits, tol=cfg.tol, fair_split=args.fair_split)
    except ValueError as exc:
        raise CliError("evaluate", str(exc)) from exc
    if ev.status != "optimal":
        raise CliError("evaluate", f"solver status {ev.status}")
    check = physical_check(base, block, ev.quantities_kw, cfg.limits) if args.physical_check else None
    _emit(cfg, _evaluation_files(cfg, block, ev, check), "trades.csv")


def _orders(cfg):
    from .market import read_orders

    if cfg.orders_file is None:
        raise CliError("orders", "no orders file (use --orders or [market] orders)")
    try:
        return read_orders(cfg.orders_file)
    except ValueError as exc:
        raise CliError("orders", str(exc)) from exc


def cmd_auction(args, cfg) -> None:
    from .market import match_orders, split_book

    asks, bids = split_book(_orders(cfg))
    try:
        res = match_orders(asks, bids)
    except ValueError as exc:
        raise CliError("matching", str(exc)) from exc
    rows = [[m.ask.peer, f"{m.ask.bus}{m.ask.phase}", m.bid.peer, f"{m.bid.bus}{m.bid.phase}",
             float(m.qty_kw), float(m.price)] for m in res.matches]
    left = [[o.side, o.peer, o.bus, o.phase, float(o.qty_kw), float(o.price)] for o in res.unmatched]
    files = {
        "matches.csv": _csv(["seller", "producer", "buyer", "consumer", "qty_kw", "price"], rows),
        "unmatched.csv": _csv(["side", "peer", "bus", "phase", "qty_kw", "price"], left),
    }
    _emit(cfg, files, "matches.csv")


def cmd_session(args, cfg) -> None:
    from .market import SessionError, run_session

    if cfg.orders_file is None:
        raise CliError("orders", "no orders file (use --orders or [market] orders)")
    try:
        rep = run_session(cfg)
    except SessionError as exc:
        raise CliError(exc.stage, str(exc).split("] ", 1)[-1]) from exc
    d = rep.to_dict()
    tlc = _csv(["trade", "tlc_producer_kw", "tlc_consumer_kw", "total_kw"],
               [[t["trade"], t["tlc_producer_kw"], t["tlc_consumer_kw"],
                 float(f"{t['tlc_producer_kw'] + t['tlc_consumer_kw']:.9g}")] for t in d["trades"]])
    _emit(cfg, {"report.json": rep.to_json(), "report.csv": rep.to_csv(), "tlc.csv": tlc}, "report.json")


def cmd_sweep(args, cfg) -> None:
    from .evaluator import evaluate_capacity, frontier_sweep

    base = _base(cfg)
    block = _block(args, cfg)
    if not 0 <= args.target < len(block):
        raise CliError("sweep", f"target index {args.target} outside 0..{len(block) - 1}")
    if args.points < 2:
        raise CliError("sweep", "need at least 2 points")
    top = args.max_total
    if top is None:
        cap = evaluate_capacity(base, block, cfg.limits, tol=cfg.tol)
        others = [q for k, q in enumerate(cap.quantities_kw) if k != args.target]
        top = 1.5 * float(np.sum(others)) if cap.status == "optimal" else 1.0
    grid = np.linspace(0.0, top, args.points)
    try:
        curve = frontier_sweep(base, block, cfg.limits, args.target, grid, args.weights, tol=cfg.tol)
    except ValueError as exc:
        raise CliError("sweep", str(exc)) from exc
    label = list(block)[args.target].label
    _emit(cfg, {"frontier.csv": _csv(["target", "others_total_kw", "target_max_kw"],
                                     [[label, x, y] for x, y in curve])}, "frontier.csv")


COMMANDS = {
    "powerflow": cmd_powerflow,
    "sensitivity": cmd_sensitivity,
    "evaluate": cmd_evaluate,
    "auction": cmd_auction,
    "session": cmd_session,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except CliError as exc:
        print(f"p2pblock {args.command}: error {exc}", file=sys.stderr)
        return 2
    except (ConfigError, argparse.ArgumentTypeError) as exc:
        print(f"p2pblock {args.command}: error [config] {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"p2pblock {args.command}: error [{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
