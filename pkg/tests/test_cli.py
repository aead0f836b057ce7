import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from p2pblock import cli
from p2pblock.config import ConfigError, SessionConfig, load_config, parse_alpha
from p2pblock.netmodel import PhaseScaling, bundled_grid_path

DATA = Path(cli.__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"

SUBCOMMANDS = ["powerflow", "sensitivity", "evaluate", "auction", "session", "sweep"]
COMMON_FLAGS = ["--grid", "--config", "--phase-scaling", "--alpha", "--dv-max", "--di-max",
                "--i-floor", "--mode", "--out"]
EXTRA_FLAGS = {
    "sensitivity": ["--phase"],
    "evaluate": ["--producers", "--consumers", "--producer-phase", "--consumer-phase",
                 "--quantities", "--trades", "--fair-split", "--physical-check"],
    "auction": ["--orders"],
    "session": ["--orders", "--loss-price", "--slot-hours"],
    "sweep": ["--target", "--max-total", "--points", "--weights", "--trades"],
}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_flags(capsys, cmd):
    with pytest.raises(SystemExit) as exc:
        cli.main([cmd, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag in COMMON_FLAGS + EXTRA_FLAGS.get(cmd, []):
        assert flag in text
    for unit in ("PCT", "PU"):
        assert unit in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "p2pblock.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout


def test_missing_grid(capsys, tmp_path):
    bad = tmp_path / "nowhere.json"
    code, _, err = run(capsys, "powerflow", "--grid", str(bad))
    assert code != 0
    assert str(bad) in err and "[grid]" in err


def test_bad_flag_values(capsys):
    code, _, err = run(capsys, "powerflow", "--alpha", "lots")
    assert code == 2 and "alpha" in err
    code, _, err = run(capsys, "powerflow", "--di-max", "-5")
    assert code == 2
    code, _, err = run(capsys, "evaluate", "--producers", "5")
    assert code == 2 and "[trades]" in err


def test_powerflow_stdout(capsys):
    code, out, err = run(capsys, "powerflow")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("bus,vm_a_pu,va_a_deg")
    assert len(lines) == 34
    assert lines[1].split(",")[1] == "1"
    assert "backend" in err


def test_sensitivity_files(capsys, tmp_path):
    code, _, _ = run(capsys, "sensitivity", "--phase", "b", "--out", str(tmp_path))
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["s_d_b.csv", "s_v_b.csv"]
    rows = (tmp_path / "s_v_b.csv").read_text().splitlines()
    assert len(rows) == 33


def test_evaluate_row(capsys, tmp_path):
    code, _, _ = run(capsys, "evaluate", "--producers", "5,7,15,19", "--consumers", "24,17,3,32",
                     "--alpha", "1", "--di-max", "30", "--dv-max", "5", "--physical-check",
                     "--out", str(tmp_path))
    assert code == 0
    table = (tmp_path / "table.csv").read_text().splitlines()
    assert table[0] == ("producers,consumers,p_max_kw,alpha_pct,di_max_pct,dv_max_pct,"
                        "total_kw,status,binding")
    row = table[1]
    assert row.startswith('"{5,7,15,19}","{24,17,3,32}","{')
    assert ",1,30,5," in row and ",optimal," in row
    trades = (tmp_path / "trades.csv").read_text().splitlines()
    assert len(trades) == 5 and trades[1].startswith("5a->24a,5a,24a,")
    assert (tmp_path / "check.csv").exists()


def test_evaluate_vet(capsys):
    code, out, _ = run(capsys, "evaluate", "--producers", "5,7", "--consumers", "24,17",
                       "--quantities", "1,1")
    assert code == 0
    assert out.count("accepted") == 2


def test_auction(capsys):
    code, out, _ = run(capsys, "auction", "--orders", str(DATA / "orders_slot1.csv"))
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "seller,producer,buyer,consumer,qty_kw,price"
    assert len(lines) == 6


def test_sweep(capsys):
    code, out, _ = run(capsys, "sweep", "--producers", "5,7", "--consumers", "24,17",
                       "--target", "1", "--points", "4", "--max-total", "30")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "target,others_total_kw,target_max_kw" and len(lines) == 5
    assert lines[1].startswith("7a->17a,0,")


def test_session_golden(capsys, tmp_path):
    code, _, _ = run(capsys, "session", "--config", str(DATA / "session.ini"), "--out", str(tmp_path))
    assert code == 0
    for name in ("report.json", "report.csv", "tlc.csv"):
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_session_unknown_bus(capsys, tmp_path):
    orders = tmp_path / "o.csv"
    orders.write_text("side,peer,bus,phase,qty_kw,price\nask,P1,77,a,3,0.1\nbid,C1,6,a,3,0.2\n")
    code, _, err = run(capsys, "session", "--orders", str(orders))
    assert code == 2
    assert "[orders]" in err and "bus 77" in err and "peer=P1" in err


def test_session_needs_orders(capsys):
    code, _, err = run(capsys, "session")
    assert code == 2 and "orders" in err


def test_parse_alpha():
    assert parse_alpha("off") is None
    assert parse_alpha(" 2.5 ") == 2.5
    with pytest.raises(ConfigError):
        parse_alpha("two")


def test_load_config(tmp_path):
    shutil.copy(DATA / "orders_slot1.csv", tmp_path / "orders.csv")
    ini = tmp_path / "s.ini"
    ini.write_text("[grid]\npath = bundled\nphase_scaling = 1,1,1\n"
                   "[limits]\nalpha_pct = off\ndi_headroom_pct = 50\n"
                   "[market]\norders = orders.csv\nloss_price = 0.2\n"
                   "[run]\nmode = vet\n")
    cfg = load_config(ini)
    assert cfg.grid == bundled_grid_path()
    assert cfg.orders_file == tmp_path / "orders.csv"
    assert cfg.alpha_pct is None and cfg.limits.alpha is None
    assert cfg.limits.rho == pytest.approx(0.5)
    assert cfg.mode == "vet" and cfg.loss_price == 0.2
    assert cfg.scaling == PhaseScaling(1.0, 1.0, 1.0)


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.ini")
    bad = tmp_path / "bad.ini"
    bad.write_text("[limits]\ndv_max_pu = lots\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[run]\nmode = fly\n")
    with pytest.raises(ConfigError, match="mode"):
        load_config(bad)
    with pytest.raises(ConfigError):
        SessionConfig(dv_max_pu=-1.0)


def test_flags_override_config(capsys, tmp_path):
    args = cli.build_parser().parse_args(
        ["session", "--config", str(DATA / "session.ini"), "--di-max", "50", "--alpha", "off",
         "--loss-price", "1.5"])
    cfg = cli._config(args)
    assert cfg.di_headroom_pct == 50 and cfg.alpha_pct is None and cfg.loss_price == 1.5
    assert cfg.dv_max_pu == 0.05
    assert cfg.orders_file == DATA / "orders_slot1.csv"


def test_session_report_json(capsys):
    code, out, _ = run(capsys, "session", "--config", str(DATA / "session.ini"))
    assert code == 0
    rep = json.loads(out)
    assert [t["verdict"] for t in rep["trades"]].count("curtailed") == 1
    assert {u["peer"] for u in rep["unmatched"]} == {"P22", "C10"}
