"""Command-line front end: subcommands, exit codes, output formats."""

import pytest

from nmsi import corpus
from nmsi.cli import main
from nmsi.history import parse_history

SMALL_TOML = """
seed = 7

[[groups]]
id = 1
members = ["p1", "p2", "p3"]
objects = ["x", "y"]

[[groups]]
id = 2
members = ["q1", "q2", "q3"]
objects = ["u", "v"]

[workload]
txn_count = 12
read_only_fraction = 0.3
ops_per_txn = 3
distribution = "zipf"
"""

CONFLICT_TOML = """
[[groups]]
id = 1
members = ["p1", "p2", "q1"]
objects = ["x"]

[[txns]]
id = "1"
coordinator = "p1"
ops = [["r", "x"], ["w", "x"]]

[[txns]]
id = "2"
coordinator = "q1"
ops = [["r", "x"], ["w", "x"]]
"""


def test_run_writes_history_and_verdict(tmp_path, capsys):
    cfg = tmp_path / "small.toml"
    cfg.write_text(SMALL_TOML)
    out = tmp_path / "h.json"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "NMSI: holds" in printed
    assert printed.startswith("txns=12 ")
    h = parse_history(out.read_text())
    assert h.txns  # an actual history landed in the file


def test_run_is_reproducible_and_seed_sensitive(tmp_path, capsys):
    cfg = tmp_path / "small.toml"
    cfg.write_text(SMALL_TOML)
    main(["run", "--config", str(cfg)])
    first = capsys.readouterr().out
    main(["run", "--config", str(cfg)])
    assert capsys.readouterr().out == first
    main(["run", "--config", str(cfg), "--seed", "8"])
    assert capsys.readouterr().out != first


def test_run_reports_conflicting_writers(tmp_path, capsys):
    # Both transactions read x0 and write x; certification lets exactly
    # one through.
    cfg = tmp_path / "conflict.toml"
    cfg.write_text(CONFLICT_TOML)
    assert main(["run", "--config", str(cfg)]) == 0
    printed = capsys.readouterr().out
    assert "committed=1 aborted=1" in printed
    line = next(l for l in printed.splitlines() if l.startswith("writes x:"))
    committed, aborted = line.split("committed=")[1].split(" aborted=")
    assert {committed, aborted} == {"1", "2"}


def test_run_config_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert main(["run", "--config", str(missing)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("delta = ]")
    assert main(["run", "--config", str(bad)]) == 2
    improper = tmp_path / "improper.toml"
    # pdv with a class spanning two groups is refused at startup.
    improper.write_text("""
        vector_mode = "pdv"

        [[groups]]
        id = 1
        members = ["p1"]
        objects = ["x"]

        [[groups]]
        id = 2
        members = ["q1"]
        objects = ["y"]

        [partition]
        classes = { c = ["x", "y"] }
    """)
    assert main(["run", "--config", str(improper)]) == 2
    err = capsys.readouterr().err
    assert "bad config" in err


def test_check_verdict_table(tmp_path, capsys):
    f = tmp_path / "skew.history"
    f.write_text(corpus.COMMIT_ORDER_SKEW_SRC + "\n")
    code = main(["check", str(f), "--criteria", "si,nmsi,sconsb"])
    lines = capsys.readouterr().out.splitlines()
    assert code == 1
    assert lines[0].startswith("SI: violated")
    assert lines[1] == "NMSI: holds"
    assert lines[2].startswith("SCONSb: violated")


def test_check_reads_both_formats(tmp_path, capsys):
    linear = tmp_path / "h.history"
    linear.write_text(corpus.STALE_READ_SRC + "\n")
    assert main(["check", str(linear), "--criteria", "cons"]) == 1
    assert "CONS: violated  witness=" in capsys.readouterr().out
    as_json = tmp_path / "h.json"
    as_json.write_text(corpus.PARALLEL_BRANCHES_JSON)
    assert main(["check", str(as_json)]) == 0


def test_check_empty_history_holds_everything(tmp_path, capsys):
    f = tmp_path / "empty.history"
    f.write_text("")
    assert main(["check", str(f)]) == 0
    out = capsys.readouterr().out
    assert out.count(": holds") == 10


def test_check_input_errors_exit_2(tmp_path, capsys):
    f = tmp_path / "h.history"
    f.write_text("r1(x0).c1\n")
    assert main(["check", str(f), "--criteria", "serializable"]) == 2
    assert main(["check", str(tmp_path / "missing.history")]) == 2
    garbled = tmp_path / "garbled.history"
    garbled.write_text("this is not a history")
    assert main(["check", str(garbled)]) == 2
    assert capsys.readouterr().err.count("\n") == 3


def test_fuzz_small_sweep_is_clean(capsys, tmp_path):
    code = main(["fuzz", "--max-txns", "2", "--max-objects", "2",
                 "--ops", "5", "--random", "50",
                 "--dump", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "SI decomposition:" in out and "dependence vectors:" in out
    assert "random: 50 histories, 0 mismatches" in out
    assert out.count("0 mismatches") == 3
    assert not list(tmp_path.iterdir())  # nothing to dump


def test_fuzz_self_test_detects_corruption(capsys, tmp_path):
    code = main(["fuzz", "--max-txns", "2", "--max-objects", "1",
                 "--ops", "4", "--self-test", "--dump", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "self-test: corrupted checker detected" in out
    dumped = list(tmp_path.iterdir())
    assert len(dumped) == 1
    parse_history(dumped[0].read_text())  # the dump is a loadable history


def test_fuzz_budget_exceeded_exits_2(capsys):
    assert main(["fuzz", "--max-txns", "99"]) == 2
    assert "budget" in capsys.readouterr().err


def test_latency_profiles_match_formulas(capsys):
    for profile in ("readonly", "global-update", "local-update"):
        assert main(["latency", "--profile", profile]) == 0
        out = capsys.readouterr().out
        assert out.strip().endswith("latency: ok")
    assert main(["latency", "--profile", "readonly", "--delta", "3"]) == 0
    out = capsys.readouterr().out
    assert "r_r=3 execution=6 (expected 6)" in out  # delta units, scale free


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["latency", "--profile", "walk"])
    assert e.value.code == 2
