"""Network-aware evaluation and settlement of peer-to-peer trade blocks on radial feeders."""
from .basecase import BaseCase, prepare_base_case, solve_base_case
from .evaluator import (
    BlockEvaluation,
    Limits,
    Trade,
    TradeBlock,
    build_block_program,
    evaluate_capacity,
    frontier_sweep,
    physical_check,
    vet_block,
)
from .kernels import BACKEND
from .lossalloc import TlcReport, line_loss_gradient, transaction_loss_coefficients
from .market import Order, SessionReport, match_orders, run_session
from .netmodel import GridModel, PhaseScaling, bundled_grid, load_grid, parse_grid, per_unit
from .powerflow import solve_phase
from .sensitivity import reduce_sensitivities, sequence_components, vuf

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BaseCase", "BlockEvaluation", "GridModel", "Limits", "Order", "PhaseScaling",
    "SessionReport", "TlcReport", "Trade", "TradeBlock", "build_block_program", "bundled_grid",
    "evaluate_capacity", "frontier_sweep", "line_loss_gradient", "load_grid", "match_orders",
    "parse_grid", "per_unit", "physical_check", "prepare_base_case", "reduce_sensitivities",
    "run_session", "sequence_components", "solve_base_case", "solve_phase",
    "transaction_loss_coefficients", "vet_block", "vuf",
]
