import numpy as np
import pytest

from tmd.mdp import TabularMDP


def chain(n: int, gamma: float = 0.9, absorbing_last: bool = True) -> TabularMDP:
    """Deterministic chain with actions (right, stay); the last state loops."""
    p = np.zeros((n, 2, n))
    for s in range(n):
        p[s, 0, min(s + 1, n - 1)] = 1.0
        p[s, 1, s] = 1.0
    return TabularMDP(p, gamma)


@pytest.fixture
def chain5():
    return chain(5)


@pytest.fixture
def two_state():
    p = np.array([[[0.3, 0.7], [1.0, 0.0]], [[0.5, 0.5], [0.0, 1.0]]])
    return TabularMDP(p, 0.8)


def linear_params(psi_rows, phi_states, phi_actions, components=1):
    """Encoders with no hidden layer, so embeddings are set by hand.

    psi(s) = psi_rows[s] and phi(s, a) = phi_states[s] + phi_actions[a];
    the snapshot is taken immediately.
    """
    from tmd.mrn import EncoderParams, MrnConfig, snapshot_target

    psi_rows = np.atleast_2d(np.asarray(psi_rows, dtype=float).T).T
    phi_states = np.atleast_2d(np.asarray(phi_states, dtype=float).T).T
    phi_actions = np.atleast_2d(np.asarray(phi_actions, dtype=float).T).T
    S, D = psi_rows.shape
    A = phi_actions.shape[0]
    cfg = MrnConfig(components=components, size=D // components, hidden=())
    arrays = {
        "psi.W0": psi_rows.copy(),
        "psi.b0": np.zeros(D),
        "phi.W0": np.concatenate([phi_states, phi_actions]),
        "phi.b0": np.zeros(D),
    }
    return snapshot_target(EncoderParams(cfg, np.eye(S), A, arrays))


def make_batch(s, a, s_next, g):
    from tmd.envs import Batch

    s = np.asarray(s)
    return Batch(s=s, a=np.asarray(a), s_next=np.asarray(s_next), g=np.asarray(g), offsets=np.ones(len(s), dtype=np.int64))


# one line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
