import io
from dataclasses import replace

import numpy as np
import pytest

from steersim.bandit import Exp3pConfig, init, update
from steersim.engine import (
    TRACE_COLUMNS,
    RunConfig,
    build_initial_distributions,
    random_streams,
    run_batch,
    run_episode,
    sample_signal,
    sample_state,
    seed_for_run,
    write_traces_csv,
)
from steersim.game import ACTIONS, STATES, GameParams, IncentiveScheme, modified_utility, utility_bounds
from steersim.stackelberg import SignalingPolicy, StackelbergSolution, solve_stackelberg

FIG2 = GameParams(0.7, 1.0, -0.05, 0.2)
SCHEME = IncentiveScheme(0.24)
POLICY = SignalingPolicy(0.7, 0.7)


def fig2_config(**kw):
    base = dict(params=FIG2, scheme=SCHEME, policy=POLICY, horizon=2000, seed=42)
    base.update(kw)
    return RunConfig(**base)


def test_sample_state_and_signal():
    rng = np.random.default_rng(0)
    assert all(sample_state(1.0, rng) == "G" for _ in range(100))
    assert all(sample_state(0.0, rng) == "B" for _ in range(100))
    assert all(sample_signal("G", SignalingPolicy(1.0, 0.0), rng) == "g" for _ in range(100))
    assert all(sample_signal("B", SignalingPolicy(1.0, 0.0), rng) == "b" for _ in range(100))


def test_state_and_signal_frequencies():
    # Vectorized equivalents of the per-round rules used by the kernel.
    n = 1_000_000
    u_state, u_sig, _, _ = random_streams(17, n)
    states = u_state < 0.7
    assert 0.6986 <= states.mean() <= 0.7014
    sig_g = u_sig < np.where(states, POLICY.alpha, POLICY.beta)
    sd = np.sqrt(0.7 * 0.3 / n)
    assert abs(sig_g.mean() - 0.7) <= 3 * sd


def test_initial_distributions():
    assert np.all(build_initial_distributions("uniform") == 0.5)
    se4 = StackelbergSolution(POLICY, (1, 1, 1, 1), "Case4", 1.0)
    init4 = build_initial_distributions("stackelberg", se4, 0.01)
    assert np.allclose(init4[:, :, 0], 0.99)
    se2 = StackelbergSolution(SignalingPolicy(0, 0), (0.5, 0, 1, 1), "Case2", 1.0)
    init2 = build_initial_distributions("stackelberg", se2, 0.01)
    assert np.allclose(init2[:, 0, 0], 0.5) and np.allclose(init2[:, 1, 0], 0.99)
    assert np.allclose(init2.sum(axis=2), 1.0)
    with pytest.raises(ValueError):
        build_initial_distributions("stackelberg")


@pytest.mark.parametrize(
    "kw",
    [{"horizon": 0}, {"init_mode": "random"}, {"floor": 0.5}, {"init_mode": "stackelberg"},
     {"init_mode": "explicit"}, {"learner": Exp3pConfig(3)}, {"seed": -1}],
)
def test_run_config_rejections(kw):
    with pytest.raises(ValueError):
        fig2_config(**kw)


def test_forced_single_round():
    pinned = ((1.0, 0.0),) * 4
    cfg = fig2_config(horizon=1, init_mode="explicit", initial=pinned, policy=SignalingPolicy(1.0, 1.0))
    streams = tuple(np.array([u]) for u in (0.0, 0.5, 0.9, 0.9))
    trace = run_episode(cfg, streams)
    (rec,) = list(trace.records())
    assert rec[:5] == (1, "G", "g", "I", "I")
    assert rec[5] == pytest.approx(1.2 + 0.24)
    assert rec[7] == 0.24


def test_trace_invariants():
    cfg = fig2_config(record_probabilities=True)
    trace = run_episode(cfg)
    assert len(trace) == cfg.horizon
    for t in range(0, len(trace), 37):
        st = STATES[trace.states[t]]
        a, b = ACTIONS[trace.a1[t]], ACTIONS[trace.a2[t]]
        assert trace.r1[t] == modified_utility(a, b, st, FIG2, SCHEME, 0)
        assert trace.r2[t] == modified_utility(b, a, st, FIG2, SCHEME, 1)
    assert np.all(trace.pay1 == np.where(trace.a1 == 0, 0.24, 0.0))
    assert set(np.unique(trace.signals)) <= {0, 1}
    counts = np.bincount(trace.signals, minlength=2)
    assert trace.learners[0][0].round == counts[0]
    assert trace.learners[1][1].round == counts[1]


def test_per_signal_isolation_and_replay():
    """Replaying the trace through the pure-Python learner reproduces the kernel exactly."""
    cfg = fig2_config(horizon=500, record_probabilities=True)
    trace = run_episode(cfg)
    lo, hi = utility_bounds(FIG2, SCHEME)
    lcfg = cfg.learner
    states = [[init(lcfg) for _ in range(2)] for _ in range(2)]
    for t in range(len(trace)):
        s = int(trace.signals[t])
        for i in range(2):
            for j in range(2):
                assert trace.probabilities[t, i, j] == states[i][j].probabilities[0]
        before_other = [states[i][1 - s].probabilities.copy() for i in range(2)]
        for i, (arm, r) in enumerate(((trace.a1[t], trace.r1[t]), (trace.a2[t], trace.r2[t]))):
            states[i][s] = update(states[i][s], int(arm), (r - lo) / (hi - lo), lcfg)
        for i in range(2):
            assert np.array_equal(states[i][1 - s].probabilities, before_other[i])
    for i in range(2):
        for j in range(2):
            assert np.array_equal(states[i][j].cum_gains, trace.learners[i][j].cum_gains)


def test_determinism_and_batches():
    cfg = fig2_config(horizon=3000)
    assert run_episode(cfg).to_csv() == run_episode(cfg).to_csv()
    one = run_batch(cfg, 1)
    first = run_episode(replace(cfg, seed=seed_for_run(cfg.seed, 0)))
    assert one[0].to_csv() == first.to_csv()
    a = run_batch(cfg, 6, workers=1)
    b = run_batch(cfg, 6, workers=3)
    assert [t.to_csv() for t in a] == [t.to_csv() for t in b]
    assert len({t.a1.tobytes() for t in a}) == 6


def test_seed_mixing():
    assert seed_for_run(5, 0) == 5
    seeds = {seed_for_run(5, r) for r in range(1000)}
    assert len(seeds) == 1000
    assert all(0 <= s < 2**64 for s in seeds)


def test_dominance_regime_converges():
    p = GameParams(0.5, 1.0, -0.1, 0.5)
    cfg = RunConfig(p, IncentiveScheme(0.0), SignalingPolicy(0.5, 0.5), 10_000, seed=3)
    trace = run_episode(cfg)
    miss = np.mean((trace.a1 != 0) | (trace.a2 != 0))
    assert miss < 0.1


def test_state_frequency_across_seeds():
    cfg = fig2_config(horizon=100_000)
    ok = 0
    for r in range(20):
        u_state = random_streams(seed_for_run(cfg.seed, r), cfg.horizon)[0]
        ok += abs(np.mean(u_state < 0.7) - 0.7) <= 0.005
    assert ok >= 19


def test_csv_format(tmp_path):
    cfg = fig2_config(horizon=20)
    traces = run_batch(cfg, 2)
    path = tmp_path / "traces.csv"
    write_traces_csv(traces, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 41
    row = lines[1].split(",")
    assert row[0] == "0" and row[1] == "1"
    assert row[2] in "GB" and row[3] in "gb" and row[4] in "IN"
    assert float(row[6]) == traces[0].r1[0]
    buf = io.StringIO()
    traces[1].write_csv(buf, run=1, header=False)
    assert buf.getvalue().splitlines() == lines[21:]


def test_stackelberg_mode_uses_floor():
    se = solve_stackelberg(FIG2, eta=0.7)
    cfg = fig2_config(init_mode="stackelberg", se=se, horizon=1, record_probabilities=True)
    trace = run_episode(cfg)
    assert np.allclose(trace.probabilities[0], 0.99)


def test_normalization_violation_surfaces(monkeypatch):
    import steersim.engine as engine

    monkeypatch.setattr(engine, "utility_bounds", lambda params, scheme: (0.0, 0.5))
    with pytest.raises(RuntimeError, match="normalization range"):
        run_episode(fig2_config(horizon=200))
