import numpy as np
import pytest

from steersim.engine import RunTrace
from steersim.game import ACTIONS, SIGNALS, STATES, GameParams, IncentiveScheme, modified_utility, payment
from steersim.stackelberg import SignalingPolicy


def make_trace(rows, params: GameParams, scheme: IncentiveScheme, policy=SignalingPolicy(0.5, 0.5)):
    """Build a trace from ``(state, signal, a1, a2)`` letter tuples."""
    th, s, a, b = zip(*rows)
    r1 = [modified_utility(x, y, t, params, scheme, 0) for t, x, y in zip(th, a, b)]
    r2 = [modified_utility(y, x, t, params, scheme, 1) for t, x, y in zip(th, a, b)]
    return RunTrace(
        states=np.array([STATES.index(v) for v in th], dtype=np.int8),
        signals=np.array([SIGNALS.index(v) for v in s], dtype=np.int8),
        a1=np.array([ACTIONS.index(v) for v in a], dtype=np.int8),
        a2=np.array([ACTIONS.index(v) for v in b], dtype=np.int8),
        r1=np.array(r1),
        r2=np.array(r2),
        pay1=np.array([payment(x, y, scheme, 0) for x, y in zip(a, b)]),
        pay2=np.array([payment(y, x, scheme, 1) for x, y in zip(a, b)]),
        learners=[],
        params=params,
        scheme=scheme,
        policy=policy,
        seed=0,
        config_hash="manual",
    )


def random_rows(rng: np.random.Generator, n: int):
    return [
        (STATES[rng.integers(2)], SIGNALS[rng.integers(2)], ACTIONS[rng.integers(2)], ACTIONS[rng.integers(2)])
        for _ in range(n)
    ]


@pytest.fixture
def fig2_params():
    return GameParams(0.7, 1.0, -0.05, 0.2)
