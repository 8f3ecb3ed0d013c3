"""Command-line front end: game generation, runs, sweeps, checks, plot data.

Subcommands
-----------
gen        emit a game JSON (spiral / padded / snake / random)
run        execute a TOML experiment config end to end and verify it
sweep      run a parameter grid of experiments, emit a summary CSV
check      re-verify an artifact directory (optionally with a dense rerun)
plot-data  emit plot-ready CSV series from an artifact directory

The environment variable PDL_OUT overrides the output root for relative
paths.  Exit codes: 0 success, 1 a hard check failed, 2 config/parse
error, 3 engine error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import tomli

from . import analysis
from .constructions import (
    find_snake,
    normalized_padded_game,
    padded_game,
    snake_game,
    spiral_matrix,
)
from .dynamics import (
    ConfigError,
    DynamicsConfig,
    EngineError,
    _write_manifest,
    enrich_records,
    load_run,
    run,
)
from .games import Game, load_game, random_identical_matrix_game, save_game

EXIT_OK = 0
EXIT_HARD_FAIL = 1
EXIT_CONFIG = 2
EXIT_ENGINE = 3


def _out_root() -> Path:
    env = os.environ.get("PDL_OUT")
    return Path(env) if env else Path(".")


def _resolve_out(path_str: str) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else _out_root() / p


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_reports(path: Path, reports) -> None:
    doc = _jsonable([r.to_dict() for r in reports])
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _print_reports(reports) -> None:
    for r in reports:
        verdict = "PASS" if r.passed else ("FAIL" if r.hard else "info-fail")
        print(f"{verdict:9s} {r.name}  worst={r.worst:.3e}")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _float_cols(x: float):
    # Decimal repr for humans, hex for a lossless round trip.
    return repr(float(x)), float(x).hex()


# ---------------------------------------------------------------------------
# Game construction shared by `gen` and experiment configs.


def _construct_game(sec: dict) -> Game:
    kind = sec.get("kind")
    if kind == "spiral":
        m, r = int(sec["m"]), int(sec.get("r", 0))
        B = spiral_matrix(m, r)
        return Game(
            payoff_kind="identical_matrix",
            action_counts=(m, m),
            payoffs=(B,),
            metadata={"construction": "spiral", "m": m, "r": r},
        )
    if kind == "padded":
        m = int(sec["m"])
        reg_range = sec.get("reg_range")
        return padded_game(
            m,
            gamma=sec.get("gamma"),
            alpha=float(sec.get("alpha", 0.0)),
            reg_range=float(reg_range) if reg_range is not None else None,
        )
    if kind == "normalized_padded":
        m = int(sec["m"])
        reg_range = sec.get("reg_range")
        return normalized_padded_game(
            m,
            alpha=float(sec.get("alpha", 0.0)),
            reg_range=float(reg_range) if reg_range is not None else None,
        )
    if kind == "snake":
        return snake_game(find_snake(int(sec["n"])))
    raise ConfigError(f"unknown construction kind: {kind!r}")


def _build_game(sec: dict, base_dir: Path, seed) -> Game:
    source = sec.get("source", "construction")
    if source == "file":
        p = Path(sec["path"])
        if not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"game file not found: {p}")
        return load_game(p)
    if source == "random":
        cell_seed = sec.get("seed", seed)
        if cell_seed is None:
            raise ConfigError("random game needs a seed ([game].seed or top-level)")
        rng = np.random.default_rng(int(cell_seed))
        return random_identical_matrix_game(
            int(sec["m1"]), int(sec["m2"]), rng,
            scale=float(sec.get("scale", 1.0)),
        )
    if source == "construction":
        return _construct_game(sec)
    raise ConfigError(f"unknown game source: {source!r}")


# ---------------------------------------------------------------------------
# Experiment configs.


@dataclass
class ExperimentConfig:
    """Parsed TOML experiment: game source + dynamics + checks + output."""

    game: dict
    dynamics: DynamicsConfig
    analysis: dict
    out_dir: str | None
    seed: int | None
    base_dir: Path

    @classmethod
    def from_doc(cls, doc: dict, base_dir: Path) -> "ExperimentConfig":
        known = {"game", "dynamics", "analysis", "output", "seed", "sweep"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if "game" not in doc:
            raise ConfigError("missing [game] section")
        if "dynamics" not in doc:
            raise ConfigError("missing [dynamics] section")
        out_sec = doc.get("output", {})
        bad = set(out_sec) - {"dir"}
        if bad:
            raise ConfigError(f"unknown [output] keys: {sorted(bad)}")
        ana = doc.get("analysis", {})
        bad = set(ana) - {"checks", "gamma1"}
        if bad:
            raise ConfigError(f"unknown [analysis] keys: {sorted(bad)}")
        return cls(
            game=doc["game"],
            dynamics=DynamicsConfig.from_dict(doc["dynamics"]),
            analysis=ana,
            out_dir=out_sec.get("dir"),
            seed=doc.get("seed"),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
        return cls.from_doc(doc, path.parent)

    def build_game(self) -> Game:
        return _build_game(self.game, self.base_dir, self.seed)


_CHECKS_NEEDING_SEG = {"period_consistency", "period_recursion", "gap_growth"}


def _run_checks(result, ana_sec: dict):
    selected = ana_sec.get("checks", "auto")
    gamma1 = ana_sec.get("gamma1")
    if selected == "auto":
        return analysis.run_all(result, gamma1=gamma1)
    seg = None
    if any(name in _CHECKS_NEEDING_SEG for name in selected):
        seg = analysis.segmentation_from_run(result)
    meta_m = result.game.metadata.get("m")
    m = int(meta_m) if meta_m is not None else None
    if gamma1 is None:
        gamma1 = analysis._gamma1_of(result.game)
    table = {
        "ftrl_improvement": lambda: analysis.check_improvement(result),
        "order_preservation": lambda: analysis.check_order_preservation(result),
        "gap_probability": lambda: analysis.check_gap_probability(result),
        "regret_bound": lambda: analysis.check_regret_bound(result),
        "potential_monotone": lambda: analysis.check_potential_monotone(result),
        "path_length": lambda: analysis.check_path_length(result),
        "lazy_update_count": lambda: analysis.check_epoch_growth(result),
        "lazy_termination": lambda: analysis.check_lazy_termination(result),
        "period_consistency": lambda: analysis.check_period_consistency(seg),
        "period_recursion": lambda: analysis.check_period_recursion(
            seg, gamma1=gamma1, m=m),
        "nash_gap_floor": lambda: analysis.check_nash_gap_floor(result, m=m),
        "gap_growth": lambda: analysis.check_gap_growth(result, seg),
        "snake_dwells": lambda: analysis.check_snake_dwells(result),
    }
    reports = []
    for name in selected:
        if name not in table:
            raise ConfigError(f"unknown check: {name!r}")
        reports.append(table[name]())
    return reports


def run_experiment(config_path, out_override=None, resume: bool = False) -> int:
    """Full pipeline: parse config, run dynamics, verify, write artifacts."""
    config_path = Path(config_path)
    try:
        exp = ExperimentConfig.load(config_path)
        game = exp.build_game()
    except (ConfigError, tomli.TOMLDecodeError, OSError, KeyError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = out_override if out_override is not None else exp.out_dir
    if out_dir is None:
        print("config error: no output directory ([output].dir or --out)",
              file=sys.stderr)
        return EXIT_CONFIG
    out = _resolve_out(str(out_dir))

    try:
        result = run(game, exp.dynamics, out_dir=out, resume=resume)
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        reports = _run_checks(result, exp.analysis)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _write_reports(out / "reports.json", reports)
    if result.period_state is not None:
        seg = analysis.segmentation_from_run(result)
        _write_segmentation_csv(out / "segmentation.csv", seg)
    _write_manifest(out, exp.dynamics, game)
    _print_reports(reports)
    hard_failures = [r.name for r in reports if r.hard and not r.passed]
    if hard_failures:
        print("hard check failures: " + ", ".join(hard_failures),
              file=sys.stderr)
        return EXIT_HARD_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# CSV emission.


def _write_segmentation_csv(path: Path, seg) -> None:
    rows = []
    for k in seg.k_values:
        censored = k == seg.censored_k
        dwell = seg.censored_dwell if censored else seg.dwells[k]
        rows.append([k, seg.start_rounds[k], dwell, censored])
    _write_csv(path, ["k", "start_round", "dwell", "censored"], rows)


def _write_gap_csvs(out: Path, result, suffix: str = "") -> list:
    paths = []
    for p in range(result.game.players):
        rounds, gaps = analysis.gap_series(result.records, p)
        rows = []
        for i, t in enumerate(rounds):
            for a in range(gaps.shape[1]):
                dec, hx = _float_cols(gaps[i, a])
                rows.append([int(t), a + 1, dec, hx])
        path = out / f"gaps_player{p + 1}{suffix}.csv"
        _write_csv(path, ["round", "action", "gap", "gap_hex"], rows)
        paths.append(path)
    return paths


def _cmd_check(args) -> int:
    art = Path(args.artifact_dir)
    try:
        result = load_run(art)
    except (ConfigError, OSError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    suffix = ""
    if args.dense:
        horizon = min(args.dense, result.config.horizon)
        dense_cfg = replace(
            result.config, horizon=horizon, record_every=1,
            checkpoint_every=None,
        )
        try:
            result = run(result.game, dense_cfg)
        except EngineError as exc:
            print(f"engine error: {exc}", file=sys.stderr)
            return EXIT_ENGINE
        suffix = "_dense"
    try:
        reports = _run_checks(result, {"checks": "auto"})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_path = Path(args.out) if args.out else art / f"reports{suffix}.json"
    _write_reports(out_path, reports)
    _write_gap_csvs(art, result, suffix=suffix)
    if result.period_state is not None:
        seg = analysis.segmentation_from_run(result)
        _write_segmentation_csv(art / f"segmentation{suffix}.csv", seg)
    _print_reports(reports)
    hard_failures = [r.name for r in reports if r.hard and not r.passed]
    if hard_failures:
        print("hard check failures: " + ", ".join(hard_failures),
              file=sys.stderr)
        return EXIT_HARD_FAIL
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    art = Path(args.artifact_dir)
    try:
        result = load_run(art)
    except (ConfigError, OSError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else art / "plots"
    out.mkdir(parents=True, exist_ok=True)
    enrich_records(result.records, result.game)

    pot_rows, gap_rows = [], []
    for r in result.records:
        if r.potential is not None:
            dec, hx = _float_cols(r.potential)
            pot_rows.append([r.round, dec, hx])
        if r.nash_gaps is not None:
            dec, hx = _float_cols(max(r.nash_gaps))
            gap_rows.append([r.round, dec, hx])
    if pot_rows:
        _write_csv(out / "potential.csv",
                   ["round", "value", "value_hex"], pot_rows)
    if gap_rows:
        _write_csv(out / "nash_gap.csv",
                   ["round", "value", "value_hex"], gap_rows)

    for p in range(result.game.players):
        rows = []
        for r in result.records:
            x = r.strategies[p]
            for a in range(x.shape[0]):
                dec, hx = _float_cols(x[a])
                rows.append([r.round, a + 1, dec, hx])
        _write_csv(out / f"probs_player{p + 1}.csv",
                   ["round", "action", "prob", "prob_hex"], rows)

    _write_gap_csvs(out, result)

    if result.period_state is not None:
        seg = analysis.segmentation_from_run(result)
        _write_segmentation_csv(out / "periods.csv", seg)
    if result.fp_dwells is not None:
        u = result.game.payoffs[0]
        n = result.game.players
        rows = []
        segs = list(result.fp_dwells)
        if result.fp_open_dwell is not None:
            segs.append(result.fp_open_dwell)
        for pos, (prof, length) in enumerate(segs):
            bits = "".join(str((prof >> i) & 1) for i in range(n))
            idx = tuple((prof >> i) & 1 for i in range(n))
            censored = (result.fp_open_dwell is not None
                        and pos == len(segs) - 1)
            rows.append([pos, bits, int(u[idx]), length, censored])
        _write_csv(out / "dwells.csv",
                   ["position", "profile_bits", "payoff", "length",
                    "censored"], rows)
    print(str(out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen.


def _cmd_gen(args) -> int:
    try:
        if args.construction == "spiral":
            game = _construct_game({"kind": "spiral", "m": args.m, "r": args.r})
            name = f"spiral_m{args.m}_r{args.r}.json"
        elif args.construction == "padded":
            kind = "normalized_padded" if args.normalized else "padded"
            sec = {"kind": kind, "m": args.m, "alpha": args.alpha}
            if args.reg_range is not None:
                sec["reg_range"] = args.reg_range
            if args.gamma is not None and not args.normalized:
                sec["gamma"] = args.gamma
            game = _construct_game(sec)
            tag = "padded_norm" if args.normalized else "padded"
            name = f"{tag}_m{args.m}.json"
        elif args.construction == "snake":
            game = _construct_game({"kind": "snake", "n": args.n})
            name = f"snake_n{args.n}.json"
        else:
            rng = np.random.default_rng(args.seed)
            game = random_identical_matrix_game(
                args.m1, args.m2, rng, scale=args.scale)
            game = replace(game, metadata={**game.metadata,
                                           "seed": args.seed})
            name = f"random_{args.m1}x{args.m2}_s{args.seed}.json"
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else _out_root() / name
    out.parent.mkdir(parents=True, exist_ok=True)
    save_game(game, out)
    print(str(out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep.

_SWEEP_KEYS = ("m", "alpha", "regularizer", "eta", "epsilon")


def _sweep_cells(doc: dict):
    sweep = doc.get("sweep", {})
    bad = set(sweep) - set(_SWEEP_KEYS) - {"target_gap"}
    if bad:
        raise ConfigError(f"unknown [sweep] keys: {sorted(bad)}")
    axes = [(k, sweep[k]) for k in _SWEEP_KEYS if k in sweep]
    if not axes:
        raise ConfigError("[sweep] declares no parameter lists")
    names = [k for k, _ in axes]
    for combo in itertools.product(*(v for _, v in axes)):
        yield dict(zip(names, combo))


def _apply_cell(doc: dict, cell: dict) -> dict:
    out = json.loads(json.dumps({k: v for k, v in doc.items()
                                 if k != "sweep"}))
    dyn = out.setdefault("dynamics", {})
    game = out.setdefault("game", {})
    for key, val in cell.items():
        if key == "m":
            if game.get("source", "construction") == "random":
                game["m1"] = game["m2"] = val
            else:
                game["m"] = val
        elif key == "alpha":
            dyn["alpha"] = val
            dyn.pop("eta", None)
        elif key == "eta":
            dyn["eta"] = val
            dyn.pop("alpha", None)
        elif key == "regularizer":
            dyn["regularizer"] = val
        elif key == "epsilon":
            dyn["lazy_epsilon"] = val
    return out


def _cell_label(index: int, cell: dict) -> str:
    parts = [f"{k}{v}" for k, v in cell.items()]
    return f"cell_{index:03d}_" + "_".join(parts).replace(":", "").replace(
        "=", "").replace("/", "")


def _rounds_to_target(result, target: float):
    gaps = analysis._nash_gaps(result)
    for r, g in zip(result.records, gaps):
        if g <= target:
            return r.round
    return None


def _sweep_cell(doc_json: str, cell_json: str, out_str: str,
                target_gap: float) -> dict:
    doc = json.loads(doc_json)
    cell = json.loads(cell_json)
    row = dict(cell)
    row.update({"status": "ok", "rounds": "", "rounds_to_target": "",
                "updates": "", "max_period": "", "hard_checks": "",
                "failed_checks": ""})
    try:
        exp = ExperimentConfig.from_doc(_apply_cell(doc, cell), Path(out_str))
        game = exp.build_game()
    except (ConfigError, KeyError, ValueError) as exc:
        row["status"] = f"config_error: {exc}"
        return row
    try:
        result = run(game, exp.dynamics, out_dir=Path(out_str))
    except EngineError as exc:
        row["status"] = f"engine_error: {exc}"
        return row
    reports = analysis.run_all(result, gamma1=exp.analysis.get("gamma1"))
    _write_reports(Path(out_str) / "reports.json", reports)
    _write_manifest(Path(out_str), exp.dynamics, game)
    hit = _rounds_to_target(result, target_gap)
    failed = [r.name for r in reports if r.hard and not r.passed]
    row["rounds"] = result.rounds
    row["rounds_to_target"] = hit if hit is not None else f"censored:{result.rounds}"
    row["updates"] = sum(s.updates for s in result.states)
    if result.period_state is not None:
        row["max_period"] = result.period_state["current_period"]
    row["hard_checks"] = "pass" if not failed else "fail"
    row["failed_checks"] = ";".join(failed)
    return row


def _cmd_sweep(args) -> int:
    config_path = Path(args.config)
    try:
        with open(config_path, "rb") as fh:
            doc = tomli.load(fh)
        cells = list(_sweep_cells(doc))
        # Validate the base config once up front (game built per cell).
        ExperimentConfig.from_doc(_apply_cell(doc, cells[0]),
                                  config_path.parent)
    except (ConfigError, tomli.TOMLDecodeError, OSError, KeyError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    target_gap = float(doc.get("sweep", {}).get("target_gap", 0.05))
    out_dir = args.out or doc.get("output", {}).get("dir")
    if out_dir is None:
        print("config error: no output directory ([output].dir or --out)",
              file=sys.stderr)
        return EXIT_CONFIG
    root = _resolve_out(str(out_dir))
    root.mkdir(parents=True, exist_ok=True)
    doc_json = json.dumps(doc)

    tasks = []
    for i, cell in enumerate(cells):
        cell_out = root / _cell_label(i, cell)
        tasks.append((doc_json, json.dumps(cell), str(cell_out), target_gap))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_cell, *zip(*tasks)))
    else:
        rows = [_sweep_cell(*t) for t in tasks]

    header = list(_SWEEP_KEYS) + ["status", "rounds", "rounds_to_target",
                                  "updates", "max_period", "hard_checks",
                                  "failed_checks"]
    table = [[row.get(h, "") for h in header] for row in rows]
    summary = root / "summary.csv"
    _write_csv(summary, header, table)
    print(str(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point.


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdl",
        description="Learning dynamics on potential games: run, verify, export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="emit a game JSON")
    gsub = gen.add_subparsers(dest="construction", required=True)
    g = gsub.add_parser("spiral", help="spiral payoff matrix game")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--r", type=int, default=0)
    g.add_argument("--out")
    g = gsub.add_parser("padded", help="padded spiral game with pull action")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--alpha", type=float, default=0.0)
    g.add_argument("--reg-range", dest="reg_range", type=float, default=None)
    g.add_argument("--gamma", type=float, default=None)
    g.add_argument("--normalized", action="store_true")
    g.add_argument("--out")
    g = gsub.add_parser("snake", help="hypercube snake game")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--out")
    g = gsub.add_parser("random", help="random identical-interest matrix game")
    g.add_argument("--m1", type=int, required=True)
    g.add_argument("--m2", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--out")

    runp = sub.add_parser("run", help="run one experiment config")
    runp.add_argument("--config", required=True)
    runp.add_argument("--out", default=None)
    runp.add_argument("--resume", action="store_true")

    sw = sub.add_parser("sweep", help="run a parameter grid")
    sw.add_argument("--config", required=True)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", default=None)

    ck = sub.add_parser("check", help="re-verify an artifact directory")
    ck.add_argument("artifact_dir")
    ck.add_argument("--dense", type=int, default=0,
                    help="re-run densely up to N rounds before checking")
    ck.add_argument("--out", default=None)

    pl = sub.add_parser("plot-data", help="emit plot-ready CSV series")
    pl.add_argument("artifact_dir")
    pl.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "gen":
        return _cmd_gen(args)
    if args.command == "run":
        return run_experiment(args.config, out_override=args.out,
                              resume=args.resume)
    if args.command == "sweep":
        return _cmd_sweep(args)
    if args.command == "check":
        return _cmd_check(args)
    return _cmd_plot_data(args)


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
