"""Engine behavior: schedules, stepping, engine equivalence, persistence."""

import json
import math

import numpy as np
import pytest

from pdl.constructions import find_snake, snake_game, spiral_matrix
from pdl.dynamics import (
    ConfigError,
    DynamicsConfig,
    LearnerState,
    game_hash,
    lazy_filter,
    learning_rate,
    load_run,
    run,
    run_stream,
    step_fictitious_play,
    step_ftrl,
)
from pdl.dynamics import _matrix_kernel_ok, _fp_kernel_ok, enrich_records
from pdl.games import (
    Game,
    potential_value,
    random_identical_matrix_game,
    utility_gradient,
)
from pdl.regularizers import parse_regularizer, uniform

ENTROPY = parse_regularizer("entropy")


def small_game(seed=0, m1=3, m2=3, scale=1.0):
    return random_identical_matrix_game(m1, m2, np.random.default_rng(seed),
                                        scale=scale)


def records_bitwise_equal(ra, rb):
    assert len(ra) == len(rb)
    for a, b in zip(ra, rb):
        assert a.round == b.round
        assert a.eta == b.eta
        assert a.period == b.period
        assert a.updated == b.updated
        for xa, xb in zip(a.strategies, b.strategies):
            assert np.array_equal(xa, xb)
        for ua, ub in zip(a.utilities, b.utilities):
            assert np.array_equal(ua, ub)
        for ca, cb in zip(a.cumulatives, b.cumulatives):
            assert np.array_equal(ca, cb)
        assert a.sums_played == b.sums_played
        assert a.bounds == b.bounds


def test_learning_rate_values():
    assert learning_rate(1, alpha=0.0) == 1.0
    assert learning_rate(10**7, alpha=0.0) == 1.0
    # 1024^-0.9 = 2^-9 mathematically; the engine's pow lands within 1 ulp.
    assert learning_rate(1024, alpha=0.9) == pytest.approx(2.0**-9, rel=1e-15)
    assert learning_rate(16, alpha=0.5) == 0.25
    assert learning_rate(5, eta=0.125) == 0.125
    with pytest.raises(ValueError):
        learning_rate(0, alpha=0.5)
    with pytest.raises(ValueError):
        learning_rate(3)
    with pytest.raises(ValueError):
        learning_rate(3, alpha=1.0)


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        DynamicsConfig(algorithm="gradient_descent", alpha=0.0)
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=0.5, eta=0.1)
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=None, eta=None)
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=1.0)
    with pytest.raises(ConfigError):
        DynamicsConfig(eta=0.0)
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=0.0, lazy_epsilon=0.0)
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=0.0, init=(1, 1))
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=0.0, update_mode="roundrobin")
    with pytest.raises(ConfigError):
        DynamicsConfig(algorithm="fictitious_play", init="uniform")
    with pytest.raises(ConfigError):
        DynamicsConfig(algorithm="fictitious_play", init=(1, 1), eta=0.1)
    with pytest.raises(ConfigError):
        DynamicsConfig(algorithm="fictitious_play", init=(1, 1),
                       lazy_epsilon=0.1)
    with pytest.raises(ConfigError):
        DynamicsConfig.from_dict({"alpha": 0.0, "bogus": 1})


def test_config_game_validation():
    g = small_game()
    fp = DynamicsConfig(algorithm="fictitious_play", init=(1, 2, 3), horizon=5)
    with pytest.raises(ConfigError):
        fp.validate(g)
    with pytest.raises(ConfigError):
        DynamicsConfig(algorithm="fictitious_play", init=(1, 4),
                       horizon=5).validate(g)
    with pytest.raises(ConfigError):
        DynamicsConfig(algorithm="fictitious_play", init="path_start",
                       horizon=5).validate(g)
    with pytest.raises(ConfigError):
        DynamicsConfig(alpha=0.0, track_periods=True, horizon=5).validate(g)


def test_config_round_trip():
    cfg = DynamicsConfig(regularizer="tsallis:q=0.25", alpha=0.5,
                         update_mode="alternating", lazy_epsilon=0.05,
                         horizon=123, record_every=7, checkpoint_every=50)
    doc = json.loads(json.dumps(cfg.to_dict()))
    back = DynamicsConfig.from_dict(doc)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    # The signature ignores cadence, so a longer-horizon config matches.
    longer = DynamicsConfig.from_dict({**doc, "horizon": 999,
                                       "record_every": 1,
                                       "checkpoint_every": None})
    assert longer.dynamics_signature() == cfg.dynamics_signature()
    assert longer.config_hash() != cfg.config_hash()


def test_step_ftrl_closed_form():
    state = LearnerState(strategy=uniform(2), cumulative=np.zeros(2),
                         comp=np.zeros(2))
    x = step_ftrl(state, np.array([1.0, 0.0]), math.log(2.0), ENTROPY)
    np.testing.assert_allclose(x, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    assert np.array_equal(state.cumulative, [1.0, 0.0])


def test_step_fictitious_play_tie_break():
    state = LearnerState(strategy=np.array([0.0, 1.0]),
                         cumulative=np.array([1.0, 1.0]),
                         comp=np.zeros(2))
    stay = step_fictitious_play(state, tie_break="adversarial_stay")
    lex = step_fictitious_play(state, tie_break="lexicographic")
    assert np.array_equal(stay, [0.0, 1.0])
    assert np.array_equal(lex, [1.0, 0.0])


def test_lazy_filter_inclusive_threshold():
    cur = np.array([1.0, 0.0])
    prop = np.array([0.0, 1.0])
    u = np.array([0.0, 0.1])
    adopted, flag = lazy_filter(cur, prop, u, 0.1)
    assert flag and adopted is prop
    kept, flag = lazy_filter(cur, prop, u, 0.1 + 1e-12)
    assert not flag and kept is cur


def test_record_plan_through_run():
    g = small_game()
    res = run(g, DynamicsConfig(alpha=0.0, horizon=100, record_every=0))
    assert [r.round for r in res.records] == [1, 2, 4, 8, 16, 32, 64, 100]
    res = run(g, DynamicsConfig(alpha=0.0, horizon=50, record_every=7))
    assert [r.round for r in res.records] == [1, 7, 14, 21, 28, 35, 42, 49, 50]


def test_round_one_plays_uniform():
    g = small_game()
    for reg in ("entropy", "euclidean", "log", "tsallis:q=0.5"):
        res = run(g, DynamicsConfig(regularizer=reg, alpha=0.0, horizon=1))
        for x in res.records[0].strategies:
            np.testing.assert_allclose(x, uniform(len(x)), atol=1e-12)


def test_records_recompute_next_strategy():
    g = small_game(3)
    res = run(g, DynamicsConfig(regularizer="entropy", alpha=0.3, horizon=60,
                                record_every=1))
    from pdl.regularizers import ftrl_argmax
    for prev, nxt in zip(res.records, res.records[1:]):
        assert prev.eta == learning_rate(prev.round, alpha=0.3)
        for i in range(2):
            np.testing.assert_array_equal(
                ftrl_argmax(ENTROPY, prev.cumulatives[i], prev.eta),
                nxt.strategies[i],
            )


def test_kernel_matches_python_engine():
    # The compiled path covers simultaneous non-lazy FTRL on matrix games.
    cases = [
        dict(regularizer="tsallis:q=0.5", alpha=0.3),
        dict(regularizer="entropy", eta=0.2),
        dict(regularizer="euclidean", alpha=0.5),
        dict(regularizer="log", alpha=0.5),
    ]
    g = small_game(11, m1=3, m2=4)
    for kw in cases:
        cfg = DynamicsConfig(horizon=200, record_every=1, **kw)
        assert _matrix_kernel_ok(g, cfg)
        fast = run(g, cfg)
        slow = run(g, cfg, force_engine="python")
        records_bitwise_equal(fast.records, slow.records)
        for sf, ss in zip(fast.states, slow.states):
            assert np.array_equal(sf.cumulative, ss.cumulative)
            assert sf.sum_played == ss.sum_played
            assert sf.updates == ss.updates
    for kw in (dict(regularizer="entropy", eta=0.2, update_mode="alternating"),
               dict(regularizer="euclidean", eta=0.5, lazy_epsilon=0.05)):
        assert not _matrix_kernel_ok(g, DynamicsConfig(horizon=10, **kw))


def test_fp_kernel_matches_python_engine():
    g = snake_game(find_snake(4))
    cfg = DynamicsConfig(algorithm="fictitious_play", init="path_start",
                         horizon=500, record_every=50)
    assert _fp_kernel_ok(g, cfg)
    fast = run(g, cfg)
    slow = run(g, cfg, force_engine="python")
    records_bitwise_equal(fast.records, slow.records)
    # Dwell telemetry lives in the dedicated FP core, kernel path only.
    assert fast.fp_dwells is not None
    assert slow.fp_dwells is None


def oracle_fp(game, horizon, tie_break="adversarial_stay"):
    """Independent fictitious-play loop; returns per-round profile bitmasks."""
    n = game.players
    actions = [0] * n
    U = [np.zeros(2) for _ in range(n)]
    profiles = []
    for _ in range(horizon):
        profiles.append(sum(actions[i] << i for i in range(n)))
        xs = [np.eye(2)[actions[i]] for i in range(n)]
        nxt = []
        for i in range(n):
            U[i] += utility_gradient(game, xs, i)
            best = int(np.argmax(U[i]))
            if tie_break == "adversarial_stay" and U[i][actions[i]] >= U[i][best]:
                best = actions[i]
            nxt.append(best)
        actions = nxt
    return profiles


def dwells_of(profiles):
    out = []
    for p in profiles:
        if out and out[-1][0] == p:
            out[-1][1] += 1
        else:
            out.append([p, 1])
    return [tuple(d) for d in out]


def test_fp_dwells_match_oracle():
    for n, horizon in ((3, 400), (4, 2000)):
        g = snake_game(find_snake(n))
        res = run(g, DynamicsConfig(algorithm="fictitious_play",
                                    init="path_start", horizon=horizon))
        want = dwells_of(oracle_fp(g, horizon))
        got = list(res.fp_dwells)
        if res.fp_open_dwell is not None:
            got.append(res.fp_open_dwell)
        assert got == want
        # Dwell lengths along the path start 1, 2, 6.
        assert [d[1] for d in got[:3]] == [1, 2, 6]


def test_alternating_updates_one_player_per_round():
    g = small_game(7)
    res = run(g, DynamicsConfig(regularizer="euclidean", eta=3.0,
                                update_mode="alternating", horizon=40,
                                record_every=1))
    for prev, nxt in zip(res.records, res.records[1:]):
        assert sum(prev.updated) == 1
        for i in range(2):
            if not prev.updated[i]:
                assert np.array_equal(prev.strategies[i], nxt.strategies[i])


def test_lazy_mode_keeps_strategy_between_updates():
    g = small_game(9)
    cfg = DynamicsConfig(regularizer="entropy", eta=0.3, lazy_epsilon=0.1,
                         update_mode="alternating", horizon=300,
                         record_every=1)
    res = run(g, cfg)
    n_updates = sum(s.updates for s in res.states)
    assert n_updates == sum(sum(r.updated) for r in res.records)
    for prev, nxt in zip(res.records, res.records[1:]):
        for i in range(2):
            if not prev.updated[i]:
                assert np.array_equal(prev.strategies[i], nxt.strategies[i])
    assert res.update_rounds() == [r.round for r in res.records if any(r.updated)]
    # Adopted moves are unilateral and filtered on the realized utility, so
    # the potential never decreases on lazy alternating runs.
    enrich_records(res.records, g)
    pots = [r.potential for r in res.records]
    assert all(b >= a - 1e-12 for a, b in zip(pots, pots[1:]))


def test_resume_is_bit_identical(tmp_path):
    g = small_game(21)
    full_cfg = DynamicsConfig(regularizer="tsallis:q=0.5", alpha=0.5,
                              horizon=1000, record_every=100)
    full = run(g, full_cfg, out_dir=tmp_path / "full")

    part = tmp_path / "part"
    run(g, DynamicsConfig(regularizer="tsallis:q=0.5", alpha=0.5,
                          horizon=500, record_every=100), out_dir=part)
    resumed = run(g, full_cfg, out_dir=part, resume=True)

    records_bitwise_equal(full.records, resumed.records)
    for sf, sr in zip(full.states, resumed.states):
        assert np.array_equal(sf.cumulative, sr.cumulative)
        assert sf.sum_played == sr.sum_played
        assert sf.bound == sr.bound
    # The rehydrated artifact matches too.
    loaded = load_run(part)
    records_bitwise_equal(full.records, loaded.records)


def test_resume_from_checkpoint_after_crash(tmp_path):
    g = small_game(22)
    cfg = DynamicsConfig(regularizer="entropy", alpha=0.5, horizon=400,
                         record_every=100, checkpoint_every=200)
    run(g, cfg, out_dir=tmp_path)
    cks = sorted((tmp_path / "checkpoints").glob("ckpt_*.json"))
    assert cks, "expected at least one checkpoint"
    # Simulate a crash that lost the final state and telemetry.
    (tmp_path / "state.json").unlink()
    (tmp_path / "records.json").unlink()
    final_cfg = DynamicsConfig(regularizer="entropy", alpha=0.5, horizon=1000,
                               record_every=100, checkpoint_every=200)
    resumed = run(g, final_cfg, out_dir=tmp_path, resume=True)
    reference = run(g, DynamicsConfig(regularizer="entropy", alpha=0.5,
                                      horizon=1000, record_every=100))
    for sf, sr in zip(reference.states, resumed.states):
        assert np.array_equal(sf.cumulative, sr.cumulative)
        assert sf.sum_played == sr.sum_played
    assert resumed.records[-1].round == 1000
    records_bitwise_equal(reference.records[-5:], resumed.records[-5:])


def test_resume_guards(tmp_path):
    g = small_game(23)
    cfg = DynamicsConfig(alpha=0.0, horizon=100)
    with pytest.raises(ConfigError):
        run(g, DynamicsConfig(alpha=0.0, horizon=10, checkpoint_every=5))
    with pytest.raises(ConfigError):
        run(g, cfg, resume=True)
    run(g, cfg, out_dir=tmp_path)
    with pytest.raises(ConfigError):
        run(g, DynamicsConfig(alpha=0.0, horizon=50), out_dir=tmp_path,
            resume=True)
    with pytest.raises(ConfigError):
        run(g, DynamicsConfig(alpha=0.5, horizon=200), out_dir=tmp_path,
            resume=True)


def test_force_engine_guards():
    g = snake_game(find_snake(3))
    cfg = DynamicsConfig(regularizer="entropy", alpha=0.0, horizon=10)
    with pytest.raises(ConfigError):
        run(g, cfg, force_engine="kernel")
    with pytest.raises(ConfigError):
        run(g, cfg, force_engine="turbo")


def test_ftrl_on_tensor_game_smoke():
    g = snake_game(find_snake(3))
    res = run(g, DynamicsConfig(regularizer="entropy", eta=0.5, horizon=50,
                                record_every=10))
    for r in res.records:
        for x in r.strategies:
            assert abs(x.sum() - 1.0) < 1e-9 and np.all(x >= 0)
    enrich_records(res.records, g)
    assert res.records[-1].potential == pytest.approx(
        potential_value(g, list(res.records[-1].strategies))
    )


def test_run_stream_matches_step_loop():
    rng = np.random.default_rng(5)
    T, m = 50, 3
    utils = rng.uniform(-1.0, 1.0, size=(T, m))
    for label, alpha, eta in (("entropy", 0.4, None),
                              ("euclidean", None, 0.2),
                              ("tsallis:q=0.5", 0.0, None)):
        spec = parse_regularizer(label)
        got = run_stream(utils, spec, alpha=alpha, eta=eta)
        state = LearnerState(strategy=uniform(m), cumulative=np.zeros(m),
                             comp=np.zeros(m))
        x = uniform(m)
        played, bound = [], []
        for t in range(1, T + 1):
            u = utils[t - 1]
            played.append(float(x @ u))
            rate = learning_rate(t, alpha=alpha, eta=eta)
            dual = np.abs(u).max() if spec.norm == "l1" else np.linalg.norm(u)
            bound.append(rate * dual * dual)
            x = step_ftrl(state, u, rate, spec)
        assert got.regret == pytest.approx(
            state.cumulative.max() - math.fsum(played), abs=1e-10)
        assert got.bound_sum == pytest.approx(math.fsum(bound), rel=1e-12)
        assert got.eta_final == learning_rate(T, alpha=alpha, eta=eta)
    with pytest.raises(ValueError):
        run_stream(utils, ENTROPY, alpha=0.5, eta=0.1)
    with pytest.raises(ValueError):
        run_stream(utils[0], ENTROPY, alpha=0.5)


def test_constant_stream_has_zero_regret():
    utils = np.ones((100, 4)) * 0.7
    got = run_stream(utils, ENTROPY, alpha=0.5)
    assert abs(got.regret) < 1e-9


def test_artifact_round_trip_and_manifest_determinism(tmp_path):
    g = small_game(31)
    cfg = DynamicsConfig(regularizer="entropy", alpha=0.5, horizon=200,
                         record_every=50)
    a, b = tmp_path / "a", tmp_path / "b"
    res = run(g, cfg, out_dir=a)
    run(g, cfg, out_dir=b)
    for name in ("manifest.json", "records.json", "state.json", "config.json",
                 "game.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    man = json.loads((a / "manifest.json").read_text())
    assert man["game_hash"] == game_hash(g)
    assert man["config_hash"] == cfg.config_hash()
    assert "records.json" in man["files"]
    loaded = load_run(a)
    records_bitwise_equal(res.records, loaded.records)
    assert loaded.config == cfg
    assert game_hash(loaded.game) == game_hash(g)
    for sf, sl in zip(res.states, loaded.states):
        assert np.array_equal(sf.cumulative, sl.cumulative)


def test_period_tracking_on_padded_game():
    from pdl.constructions import padded_game
    g = padded_game(5, gamma=200.0)
    res = run(g, DynamicsConfig(regularizer="entropy", alpha=0.0,
                                horizon=500, record_every=100))
    pst = res.period_state
    assert pst is not None
    assert pst["current_period"] >= 4
    assert pst["violations"]["count"] == 0
    starts = pst["start_rounds"]
    assert starts[3] == 1
    assert starts[4] == 2
    assert res.records[0].period == 3
    # Records carry the tracked period at their round.
    for r in res.records[1:]:
        assert r.period is not None and 3 <= r.period <= 9
