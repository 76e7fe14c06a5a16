import struct
from pathlib import Path

import numpy as np
import pytest

from spdelab import cli
from spdelab.cli import SnapshotError, csv_text, main, read_snapshot, snapshot_bytes
from spdelab.scenario import ScenarioError, parse_scenario, serialize

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = sorted((ROOT / "scenarios").glob("*.toml"))

SMALL_HEAT = """
[noise]
modes = [{mu = 0.25, basis = "sin", k = 1}, {mu = 0.25, basis = "sin", k = 2}]
[grid]
nodes = 16
[equation]
kind = "PLaplacianReaction"
flux = "linear"
[time]
dt = 0.01
steps = 8
[run]
seed = 2
paths = 6
levels = 3
halvings = 2
probe_samples = 20
snapshots = [0, 4, 8]
"""


def write(tmp_path, text, name="s.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.mark.parametrize("path", SCENARIOS, ids=lambda p: p.stem)
def test_scenarios_round_trip(path):
    scen = parse_scenario(path.read_text())
    again = parse_scenario(serialize(scen))
    assert again.sections == scen.sections
    assert again.digest() == scen.digest()
    scen.equation(), scen.spec(), scen.grid(), scen.config()


def test_pivot_error_names_section_and_line():
    text = "[equation]\nkind = \"PorousMedium\"\np = 4.0\npivot = \"L2\"\n[time]\ndt = 0.1\nsteps = 2\n"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    (msg,) = err.value.problems
    assert msg.startswith("line 1: [equation] pivot invariant")


def test_all_problems_are_collected():
    text = "[grid]\nnodes = \"many\"\nshape = 3\n[solver]\nnewton_tol = 1e-8\n[extra]\na = 1\n"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    probs = err.value.problems
    assert any("line 2" in p and "nodes must be an integer" in p for p in probs)
    assert any("line 3" in p and "unknown key 'shape'" in p for p in probs)
    assert any("unknown section [extra]" in p for p in probs)
    assert sum("missing required key" in p for p in probs) == 2


def test_syntax_and_consistency_errors():
    with pytest.raises(ScenarioError, match="syntax"):
        parse_scenario("[time\n")
    base = "[time]\ndt = 0.1\nsteps = 4\n"
    with pytest.raises(ScenarioError, match="needs bc"):
        parse_scenario(base + "[equation]\nkind = \"FiniteDimGraph\"\n")
    with pytest.raises(ScenarioError, match="inflow"):
        parse_scenario(base + "[equation]\nkind = \"Transport\"\n")
    with pytest.raises(ScenarioError, match="snapshot step 9"):
        parse_scenario(base + "[run]\nsnapshots = [9]\n")
    with pytest.raises(ScenarioError, match="noise mode 0"):
        parse_scenario(base + "[noise]\nmodes = [{mu = 1.0, basis = \"tan\"}]\n")


def test_initial_profiles():
    base = "[time]\ndt = 0.1\nsteps = 4\n[grid]\nnodes = 4\ninitial = "
    assert np.allclose(parse_scenario(base + "[1, 2, 3, 4]\n").initial(), [1, 2, 3, 4])
    assert np.allclose(parse_scenario(base + "\"step\"\n").initial(), [1, 1, 0, 0])
    with pytest.raises(ScenarioError, match="3 values"):
        parse_scenario(base + "[1, 2, 3]\n")


def test_snapshot_format():
    X, y = np.array([1.0, -2.5, 3e-300]), np.array([0.1, 0.2, 0.3])
    data = snapshot_bytes(7, X, y)
    assert data[:4] == b"SPD1" and struct.unpack("<II", data[4:12]) == (3, 7)
    n, X2, y2 = read_snapshot(data)
    assert n == 7 and np.array_equal(X, X2) and np.array_equal(y, y2)
    with pytest.raises(SnapshotError, match="magic"):
        read_snapshot(b"XXXX" + data[4:])
    with pytest.raises(SnapshotError, match="size"):
        read_snapshot(data[:-8])
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(data[:5])
    with pytest.raises(SnapshotError):
        read_snapshot(data + b"\0")


def test_csv_format():
    text = csv_text("ab", ["t", "v"], [(0.1, 1), (1 / 3, 2.5)])
    lines = text.split("\n")
    assert lines[0] == "# scenario sha256=ab" and lines[1] == "t,v"
    assert lines[2] == "0.10000000000000001,1"
    assert float(lines[3].split(",")[0]) == 1 / 3
    assert "\r" not in text


@pytest.mark.parametrize("sub, files", [
    ("simulate", ["moments.csv", "snapshot_0.fld", "snapshot_4.fld", "snapshot_8.fld"]),
    ("converge", ["order.csv"]),
    ("validate", ["cross.csv"]),
    ("variational", ["bem.csv", "bem_compare.csv"]),
    ("probe", ["hypotheses.txt"]),
])
def test_subcommands(tmp_path, sub, files):
    cfg = write(tmp_path, SMALL_HEAT)
    out = tmp_path / "out"
    assert main([sub, "--config", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == sorted(files)
    digest = parse_scenario(SMALL_HEAT).digest()
    first = (out / files[0]).read_bytes()
    if files[0].endswith((".csv", ".txt")):
        assert first.startswith(f"# scenario sha256={digest}\n".encode())


def test_snapshot_contents(tmp_path):
    cfg = write(tmp_path, SMALL_HEAT)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    n, X, y = read_snapshot(tmp_path / "o" / "snapshot_0.fld")
    assert n == 0 and np.allclose(X, y)
    assert np.allclose(X, np.sin(np.pi * np.arange(1, 17) / 17))


def test_config_errors_exit_2(tmp_path, capsys):
    bad = write(tmp_path, "[equation]\nkind = \"PorousMedium\"\npivot = \"L2\"\n"
                          "[time]\ndt = 0.1\nsteps = 2\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "pivot invariant" in err and "line 1" in err
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 2


def test_aborted_run_leaves_only_partial_files(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("injected failure")

    monkeypatch.setattr(cli, "solve_path", boom)
    cfg = write(tmp_path, SMALL_HEAT)
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 1
    assert [p.name for p in out.iterdir()] == ["moments.csv.partial"]


def test_cli_overrides_change_output(tmp_path):
    cfg = write(tmp_path, SMALL_HEAT)
    outs = []
    for seed in ("2", "3"):
        o = tmp_path / seed
        main(["simulate", "--config", str(cfg), "--out", str(o), "--seed", seed, "--paths", "3"])
        outs.append((o / "moments.csv").read_bytes())
    assert outs[0] != outs[1]
    with pytest.raises(SystemExit):
        main(["simulate", "--config", str(cfg), "--paths", "0"])


def test_thread_count_does_not_change_bytes(tmp_path):
    cfg = write(tmp_path, SMALL_HEAT)
    for sub in ("simulate", "validate"):
        runs = []
        for t in ("1", "8"):
            o = tmp_path / f"{sub}{t}"
            assert main([sub, "--config", str(cfg), "--out", str(o), "--threads", t]) == 0
            runs.append({p.name: p.read_bytes() for p in o.iterdir()})
        assert runs[0] == runs[1]
