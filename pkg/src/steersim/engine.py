"""Repeated-game simulator.

Every round a state is drawn from the prior, the mediator emits a public
signal, and each player pulls an arm from the EXP3.P instance it keeps for that
signal. Players see only their own modified utility, mapped into [0, 1].

Integer codes used in traces: state 0=G 1=B, signal 0=g 1=b, action 0=I 1=N.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from numba import njit

from .bandit import (
    Exp3pConfig,
    LearnerState,
    accumulate_estimates,
    draw_arm,
    mix_probabilities,
    validate_distribution,
)
from .game import ACTIONS, SIGNALS, STATES, GameParams, IncentiveScheme, utility_bounds
from .stackelberg import SignalingPolicy, StackelbergSolution

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
INIT_MODES = ("uniform", "stackelberg", "explicit")
TRACE_COLUMNS = ("run", "t", "state", "signal", "a1", "a2", "r1", "r2", "pay1", "pay2")

T = TypeVar("T")


@dataclass(frozen=True)
class RunConfig:
    params: GameParams
    scheme: IncentiveScheme
    policy: SignalingPolicy
    horizon: int
    init_mode: str = "uniform"
    floor: float = 0.01
    learner: Exp3pConfig = field(default_factory=Exp3pConfig)
    seed: int = 0
    se: StackelbergSolution | None = None
    # Explicit per-(player, signal) initial distributions over (I, N). Zero
    # entries are allowed here so tests can pin a learner to one action.
    initial: tuple | None = None
    record_probabilities: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if not 0.0 < self.floor < 0.5:
            raise ValueError(f"floor must lie in (0, 0.5), got {self.floor}")
        if self.learner.num_arms != 2:
            raise ValueError("the investment game has exactly two actions")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.init_mode == "stackelberg" and self.se is None:
            raise ValueError("stackelberg init_mode needs a Stackelberg solution")
        if self.init_mode == "explicit" and self.initial is None:
            raise ValueError("explicit init_mode needs initial distributions")

    def fingerprint(self) -> str:
        return config_hash(self)


@dataclass
class RunTrace:
    states: np.ndarray
    signals: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    pay1: np.ndarray
    pay2: np.ndarray
    learners: list[list[LearnerState]]
    params: GameParams
    scheme: IncentiveScheme
    policy: SignalingPolicy
    seed: int
    config_hash: str
    probabilities: np.ndarray | None = None  # (T, player, signal) P(I) before each round

    def __len__(self):
        return self.states.shape[0]

    def records(self) -> Iterable[tuple]:
        for t in range(len(self)):
            yield (
                t + 1,
                STATES[self.states[t]],
                SIGNALS[self.signals[t]],
                ACTIONS[self.a1[t]],
                ACTIONS[self.a2[t]],
                float(self.r1[t]),
                float(self.r2[t]),
                float(self.pay1[t]),
                float(self.pay2[t]),
            )

    def write_csv(self, fh, run: int = 0, header: bool = True) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow(TRACE_COLUMNS)
        for rec in self.records():
            writer.writerow((run, rec[0], *rec[1:5], *(repr(v) for v in rec[5:])))

    def to_csv(self, run: int = 0) -> str:
        buf = io.StringIO()
        self.write_csv(buf, run)
        return buf.getvalue()


def write_traces_csv(traces: Sequence[RunTrace], path) -> None:
    """Long-format CSV of several runs, one row per (run, round)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for r, trace in enumerate(traces):
            trace.write_csv(fh, run=r, header=(r == 0))


def sample_state(psi: float, rng: np.random.Generator) -> str:
    return "G" if rng.random() < psi else "B"


def sample_signal(state: str, policy: SignalingPolicy, rng: np.random.Generator) -> str:
    p_g = policy.alpha if state == "G" else policy.beta
    return "g" if rng.random() < p_g else "b"


def build_initial_distributions(
    mode: str,
    se: StackelbergSolution | None = None,
    floor: float = 0.01,
) -> np.ndarray:
    """Initial (I, N) distribution for each (player, signal), shape ``(2, 2, 2)``."""
    out = np.full((2, 2, 2), 0.5)
    if mode == "uniform":
        return out
    if mode != "stackelberg":
        raise ValueError(f"unknown initialization mode {mode!r}")
    if se is None:
        raise ValueError("stackelberg initialization needs a Stackelberg solution")
    for j, invest in enumerate((se.follower[0], se.follower[2])):
        p = min(max(invest, floor), 1.0 - floor)
        out[:, j, 0] = p
        out[:, j, 1] = 1.0 - p
    return out


def seed_for_run(base_seed: int, run: int) -> int:
    return (base_seed ^ ((run * GOLDEN64) & MASK64)) & MASK64


def random_streams(seed: int, horizon: int) -> tuple[np.ndarray, ...]:
    """Four independent uniform streams: state, signal, player-1 action, player-2 action."""
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(c).random(horizon) for c in children)


def config_hash(config: RunConfig) -> str:
    doc = {
        "psi": config.params.psi,
        "y_good": config.params.y_good,
        "y_bad": config.params.y_bad,
        "z": config.params.z,
        "M": config.scheme.payment_m,
        "target": str(config.scheme.target),
        "policy": [config.policy.alpha, config.policy.beta],
        "horizon": config.horizon,
        "init_mode": config.init_mode,
        "floor": config.floor,
        "learner": [
            config.learner.learning_rate,
            config.learner.exploration,
            config.learner.bias,
            list(config.learner.initial_dist),
        ],
        "se_follower": list(config.se.follower) if config.se else None,
        "initial": np.asarray(config.initial).tolist() if config.initial is not None else None,
        "seed": config.seed,
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@njit(cache=True, nogil=True)
def _play(
    psi, alpha, beta, z, y_good, y_bad, pay_m, target, eta, gamma, bias, v_min, v_max,
    log_prior, cum_gains, probs,
    u_state, u_signal, u_a1, u_a2,
    states, signals, a1, a2, r1, r2, pay1, pay2,
    prob_trace, record,
):
    span = v_max - v_min
    horizon = u_state.shape[0]
    acts = np.zeros(2, dtype=np.int64)
    vals = np.zeros(2)
    pays = np.zeros(2)
    for t in range(horizon):
        theta = 0 if u_state[t] < psi else 1
        p_g = alpha if theta == 0 else beta
        s = 0 if u_signal[t] < p_g else 1
        y = y_good if theta == 0 else y_bad
        if record:
            for i in range(2):
                for j in range(2):
                    prob_trace[t, i, j] = probs[i, j, 0]
        acts[0] = draw_arm(probs[0, s], u_a1[t])
        acts[1] = draw_arm(probs[1, s], u_a2[t])
        for i in range(2):
            own = acts[i]
            other = acts[1 - i]
            if own == 1:
                base = 0.0
            elif other == 0:
                base = z + y
            else:
                base = z
            pays[i] = pay_m if own == target[i] else 0.0
            vals[i] = base + pays[i]
        for i in range(2):
            g = (vals[i] - v_min) / span
            if g < 0.0 or g > 1.0:
                return t + 1
            accumulate_estimates(probs[i, s], acts[i], g, bias, cum_gains[i, s])
            mix_probabilities(log_prior[i, s], cum_gains[i, s], eta, gamma, probs[i, s])
        states[t] = theta
        signals[t] = s
        a1[t] = acts[0]
        a2[t] = acts[1]
        r1[t] = vals[0]
        r2[t] = vals[1]
        pay1[t] = pays[0]
        pay2[t] = pays[1]
    return 0


def _initial_for(config: RunConfig) -> np.ndarray:
    if config.init_mode == "explicit":
        init = np.asarray(config.initial, dtype=np.float64).reshape(2, 2, 2)
        for i in range(2):
            for j in range(2):
                validate_distribution(tuple(init[i, j]), 2, allow_zero=True)
        return init
    return build_initial_distributions(config.init_mode, config.se, config.floor)


def run_episode(config: RunConfig, streams: tuple[np.ndarray, ...] | None = None) -> RunTrace:
    """Play ``config.horizon`` rounds; ``streams`` overrides the seeded uniforms (test hook)."""
    horizon = config.horizon
    if streams is None:
        streams = random_streams(config.seed, horizon)
    streams = tuple(np.ascontiguousarray(s, dtype=np.float64) for s in streams)
    if len(streams) != 4 or any(s.shape != (horizon,) for s in streams):
        raise ValueError("need four uniform streams of length horizon")

    params, scheme, lcfg = config.params, config.scheme, config.learner
    v_min, v_max = utility_bounds(params, scheme)
    init = _initial_for(config)
    with np.errstate(divide="ignore"):
        log_prior = np.log(init)
    cum_gains = np.zeros((2, 2, 2))
    probs = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            mix_probabilities(log_prior[i, j], cum_gains[i, j], lcfg.learning_rate, lcfg.exploration, probs[i, j])
    target = np.array([ACTIONS.index(config.scheme.target.a1), ACTIONS.index(config.scheme.target.a2)], dtype=np.int64)

    states = np.empty(horizon, dtype=np.int8)
    signals = np.empty(horizon, dtype=np.int8)
    a1 = np.empty(horizon, dtype=np.int8)
    a2 = np.empty(horizon, dtype=np.int8)
    r1, r2, pay1, pay2 = (np.empty(horizon) for _ in range(4))
    record = config.record_probabilities
    prob_trace = np.empty((horizon, 2, 2) if record else (1, 2, 2))

    bad_round = _play(
        params.psi, config.policy.alpha, config.policy.beta, params.z, params.y_good, params.y_bad,
        scheme.payment_m, target, lcfg.learning_rate, lcfg.exploration, lcfg.bias, v_min, v_max,
        log_prior, cum_gains, probs, *streams,
        states, signals, a1, a2, r1, r2, pay1, pay2, prob_trace, record,
    )
    if bad_round:
        raise RuntimeError(f"round {bad_round}: utility left the normalization range [{v_min}, {v_max}]")

    counts = np.bincount(signals, minlength=2)
    learners = [
        [
            LearnerState(log_prior[i, j].copy(), cum_gains[i, j].copy(), probs[i, j].copy(),
                         lcfg.learning_rate, int(counts[j]))
            for j in range(2)
        ]
        for i in range(2)
    ]
    return RunTrace(
        states, signals, a1, a2, r1, r2, pay1, pay2, learners,
        params=params,
        scheme=scheme,
        policy=config.policy,
        seed=config.seed,
        config_hash=config_hash(config),
        probabilities=prob_trace if record else None,
    )


def _with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, seed=seed)


def map_batch(
    config: RunConfig,
    runs: int,
    fn: Callable[[RunTrace], T],
    workers: int = 1,
) -> list[T]:
    """Apply ``fn`` to each run's trace without keeping the traces alive."""
    if runs < 1:
        raise ValueError("runs must be >= 1")

    def one(r: int) -> T:
        return fn(run_episode(_with_seed(config, seed_for_run(config.seed, r))))

    if workers <= 1:
        return [one(r) for r in range(runs)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(runs)))


def run_batch(config: RunConfig, runs: int, workers: int = 1) -> list[RunTrace]:
    return map_batch(config, runs, lambda tr: tr, workers)
