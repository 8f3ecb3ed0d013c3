"""End-to-end CLI: gen/run/check/plot-data/sweep, exit codes, artifacts."""

import csv
import json
import shutil
import subprocess
import textwrap

import numpy as np
import pytest

from pdl.analysis import gap_series
from pdl.cli import EXIT_CONFIG, EXIT_ENGINE, EXIT_HARD_FAIL, EXIT_OK, main
from pdl.constructions import spiral_matrix
from pdl.dynamics import EngineError, load_run
from pdl.games import load_game

PADDED_TOML = textwrap.dedent("""\
    [game]
    kind = "padded"
    m = 5
    gamma = 200.0

    [dynamics]
    regularizer = "entropy"
    alpha = 0.0
    horizon = 600
    record_every = 5
""")

FP_TOML = textwrap.dedent("""\
    [game]
    kind = "snake"
    n = 3

    [dynamics]
    algorithm = "fictitious_play"
    init = "path_start"
    horizon = 400
    record_every = 1
""")


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def padded_artifact(tmp_path_factory):
    base = tmp_path_factory.mktemp("padded_cli")
    cfg = base / "exp.toml"
    cfg.write_text(PADDED_TOML)
    art = base / "art"
    assert main(["run", "--config", str(cfg), "--out", str(art)]) == EXIT_OK
    return art


@pytest.fixture(scope="module")
def fp_artifact(tmp_path_factory):
    base = tmp_path_factory.mktemp("fp_cli")
    cfg = base / "exp.toml"
    cfg.write_text(FP_TOML)
    art = base / "art"
    assert main(["run", "--config", str(cfg), "--out", str(art)]) == EXIT_OK
    return art


# ---------------------------------------------------------------------------
# gen


def test_gen_spiral_uses_out_root(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PDL_OUT", str(tmp_path))
    assert main(["gen", "spiral", "--m", "4", "--r", "2"]) == EXIT_OK
    out = tmp_path / "spiral_m4_r2.json"
    assert out.exists()
    assert capsys.readouterr().out.strip() == str(out)
    game = load_game(out)
    assert np.array_equal(game.payoffs[0], spiral_matrix(4, 2))
    assert game.metadata["construction"] == "spiral"


def test_gen_random_is_seeded_and_reproducible(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    argv = ["gen", "random", "--m1", "3", "--m2", "4", "--seed", "9"]
    assert main(argv + ["--out", str(a)]) == EXIT_OK
    assert main(argv + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    game = load_game(a)
    assert game.action_counts == (3, 4)
    assert game.metadata["seed"] == 9


def test_gen_normalized_padded_small(tmp_path):
    out = tmp_path / "norm.json"
    assert main(["gen", "padded", "--m", "5", "--normalized",
                 "--reg-range", "0.001", "--out", str(out)]) == EXIT_OK
    game = load_game(out)
    assert game.metadata["size"] == 17
    assert game.action_counts == (17, 17)


def test_gen_snake_metadata(tmp_path):
    out = tmp_path / "snake.json"
    assert main(["gen", "snake", "--n", "4", "--out", str(out)]) == EXIT_OK
    game = load_game(out)
    assert game.metadata["length"] == 7
    assert len(game.metadata["path"]) == 8
    assert game.players == 4


def test_gen_rejects_odd_spiral(tmp_path, capsys):
    out = tmp_path / "bad.json"
    code = main(["gen", "spiral", "--m", "5", "--out", str(out)])
    assert code == EXIT_CONFIG
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen", "hexagon", "--m", "4"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# run


def test_run_writes_full_artifact_set(padded_artifact):
    names = {p.name for p in padded_artifact.iterdir()}
    assert {"config.json", "game.json", "records.json", "state.json",
            "manifest.json", "reports.json", "segmentation.csv"} <= names
    reports = json.loads((padded_artifact / "reports.json").read_text())
    by_name = {r["name"]: r for r in reports}
    for name in ("ftrl_improvement", "regret_bound", "period_consistency",
                 "period_recursion", "nash_gap_floor", "gap_growth"):
        assert by_name[name]["passed"], name
    header, rows = read_csv(padded_artifact / "segmentation.csv")
    assert header == ["k", "start_round", "dwell", "censored"]
    assert [int(r[0]) for r in rows] == list(range(3, 3 + len(rows)))
    assert [r[3] for r in rows].count("True") == 1
    assert rows[-1][3] == "True"
    manifest = json.loads((padded_artifact / "manifest.json").read_text())
    assert "records.json" in manifest["files"]
    assert "reports.json" in manifest["files"]


def test_run_artifacts_are_byte_deterministic(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(PADDED_TOML.replace("horizon = 600", "horizon = 300"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert "PASS" in capsys.readouterr().out
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    for name in ("records.json", "state.json", "config.json", "game.json",
                 "reports.json", "segmentation.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_run_reports_hard_failure(tmp_path, monkeypatch, capsys):
    # An impossible dwell floor makes period_recursion fail hard.
    monkeypatch.setenv("PDL_OUT", str(tmp_path))
    cfg = tmp_path / "exp.toml"
    cfg.write_text(PADDED_TOML.replace("horizon = 600", "horizon = 300")
                   + textwrap.dedent("""\

        [analysis]
        checks = ["period_recursion"]
        gamma1 = 1e9

        [output]
        dir = "hard"
    """))
    assert main(["run", "--config", str(cfg)]) == EXIT_HARD_FAIL
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    assert "hard check failures: period_recursion" in captured.err
    reports = json.loads((tmp_path / "hard" / "reports.json").read_text())
    assert reports[0]["name"] == "period_recursion"
    assert not reports[0]["passed"]


def test_run_missing_game_file_names_path(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(textwrap.dedent("""\
        [game]
        source = "file"
        path = "nope/missing.json"

        [dynamics]
        regularizer = "entropy"
        eta = 0.1
        horizon = 10
    """))
    assert main(["run", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "missing.json" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "[game]\nkind = 'padded'\nm = 5\n",                      # no [dynamics]
    "[bogus]\nx = 1\n",                                      # unknown section
    "not = [toml",                                           # parse error
])
def test_run_config_errors(tmp_path, capsys, text):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(text)
    assert main(["run", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_run_without_output_dir(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(PADDED_TOML)
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "output directory" in capsys.readouterr().err


def test_run_unknown_check_name(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(PADDED_TOML.replace("horizon = 600", "horizon = 50")
                   + '\n[analysis]\nchecks = ["nope"]\n')
    assert main(["run", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "unknown check" in capsys.readouterr().err


def test_run_engine_error_exit_code(tmp_path, monkeypatch, capsys):
    def boom(game, config, out_dir=None, resume=False):
        raise EngineError("forced solver fault")

    monkeypatch.setattr("pdl.cli.run", boom)
    cfg = tmp_path / "exp.toml"
    cfg.write_text(PADDED_TOML)
    assert main(["run", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_ENGINE
    assert "engine error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# check


def test_check_rewrites_reports_and_gap_csvs(padded_artifact):
    assert main(["check", str(padded_artifact)]) == EXIT_OK
    result = load_run(padded_artifact)
    for p in (1, 2):
        assert (padded_artifact / f"gaps_player{p}.csv").exists()
    header, rows = read_csv(padded_artifact / "gaps_player1.csv")
    assert header == ["round", "action", "gap", "gap_hex"]
    table = {(int(r[0]), int(r[1])): float.fromhex(r[3]) for r in rows}
    rounds, gaps = gap_series(result.records, 0)
    assert len(table) == gaps.size
    for i, t in enumerate(rounds):
        for a in range(gaps.shape[1]):
            assert table[(int(t), a + 1)] == gaps[i, a]


def test_check_dense_rerun(padded_artifact):
    assert main(["check", str(padded_artifact), "--dense", "300"]) == EXIT_OK
    assert (padded_artifact / "reports_dense.json").exists()
    assert (padded_artifact / "segmentation_dense.csv").exists()
    assert (padded_artifact / "gaps_player1_dense.csv").exists()
    reports = json.loads((padded_artifact / "reports_dense.json").read_text())
    by_name = {r["name"]: r for r in reports}
    assert by_name["path_length"]["details"]["applicable"]
    assert all(r["passed"] for r in reports if r["hard"])


def test_check_flags_tampered_records(padded_artifact, tmp_path, capsys):
    art = tmp_path / "tampered"
    shutil.copytree(padded_artifact, art)
    doc = json.loads((art / "records.json").read_text())
    mid = len(doc) // 2
    # Large enough to clear the gamma-scaled dual-norm series in the bound.
    doc[mid]["sums_played"][0] = (-1e12).hex()
    (art / "records.json").write_text(json.dumps(doc, indent=1))
    assert main(["check", str(art)]) == EXIT_HARD_FAIL
    assert "regret_bound" in capsys.readouterr().err


def test_check_rejects_non_artifact(tmp_path, capsys):
    assert main(["check", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# plot-data


def test_plot_data_padded(padded_artifact, capsys):
    assert main(["plot-data", str(padded_artifact)]) == EXIT_OK
    plots = padded_artifact / "plots"
    assert capsys.readouterr().out.strip() == str(plots)
    for name in ("potential.csv", "nash_gap.csv", "probs_player1.csv",
                 "probs_player2.csv", "gaps_player1.csv", "periods.csv"):
        assert (plots / name).exists(), name
    # The hex column reproduces the stored strategies bit for bit.
    result = load_run(padded_artifact)
    header, rows = read_csv(plots / "probs_player1.csv")
    assert header == ["round", "action", "prob", "prob_hex"]
    table = {(int(r[0]), int(r[1])): float.fromhex(r[3]) for r in rows}
    for rec in result.records:
        for a, v in enumerate(rec.strategies[0]):
            assert table[(rec.round, a + 1)] == v
    _, prows = read_csv(plots / "potential.csv")
    assert len(prows) == len(result.records)


def test_plot_data_fp_dwells(fp_artifact):
    assert main(["plot-data", str(fp_artifact)]) == EXIT_OK
    header, rows = read_csv(fp_artifact / "plots" / "dwells.csv")
    assert header == ["position", "profile_bits", "payoff", "length",
                      "censored"]
    payoffs = [int(r[2]) for r in rows]
    assert payoffs == sorted(payoffs) and len(set(payoffs)) == len(payoffs)
    assert all(len(r[1]) == 3 for r in rows)
    assert sum(int(r[3]) for r in rows) == 400
    assert [r[4] for r in rows] == ["False"] * (len(rows) - 1) + ["True"]


# ---------------------------------------------------------------------------
# sweep


def test_sweep_grid_summary(tmp_path):
    cfg = tmp_path / "grid.toml"
    cfg.write_text(textwrap.dedent("""\
        seed = 11

        [game]
        source = "random"
        m1 = 3
        m2 = 3

        [dynamics]
        regularizer = "entropy"
        eta = 0.2
        horizon = 300
        record_every = 1

        [sweep]
        regularizer = ["entropy", "euclidean"]
        eta = [0.1, 0.3]
        target_gap = -1.0
    """))
    root = tmp_path / "grid"
    assert main(["sweep", "--config", str(cfg), "--out", str(root),
                 "--jobs", "1"]) == EXIT_OK
    header, rows = read_csv(root / "summary.csv")
    assert header == ["m", "alpha", "regularizer", "eta", "epsilon",
                      "status", "rounds", "rounds_to_target", "updates",
                      "max_period", "hard_checks", "failed_checks"]
    assert len(rows) == 4
    got = {(r[header.index("regularizer")], r[header.index("eta")])
           for r in rows}
    assert got == {("entropy", "0.1"), ("entropy", "0.3"),
                   ("euclidean", "0.1"), ("euclidean", "0.3")}
    for r in rows:
        row = dict(zip(header, r))
        assert row["status"] == "ok"
        assert row["rounds"] == "300"
        assert row["updates"] == "600"
        # A negative target gap is unreachable: every cell is censored.
        assert row["rounds_to_target"] == "censored:300"
        assert row["hard_checks"] == "pass"
    cells = sorted(p.name for p in root.iterdir() if p.is_dir())
    assert len(cells) == 4 and all(c.startswith("cell_") for c in cells)
    for c in cells:
        assert (root / c / "reports.json").exists()
        assert (root / c / "manifest.json").exists()


def test_sweep_rejects_unknown_axis(tmp_path, capsys):
    cfg = tmp_path / "grid.toml"
    cfg.write_text(textwrap.dedent("""\
        [game]
        kind = "padded"
        m = 5

        [dynamics]
        regularizer = "entropy"
        alpha = 0.0
        horizon = 50

        [sweep]
        bogus = [1, 2]
    """))
    assert main(["sweep", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "unknown [sweep] keys" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# console script


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "snake.json"
    proc = subprocess.run(["pdl", "gen", "snake", "--n", "3",
                           "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    game = load_game(out)
    assert game.metadata["length"] == 4
