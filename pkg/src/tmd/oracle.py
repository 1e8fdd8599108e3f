"""Exact goal-conditioned value functions and the successor distances they induce.

Convention: Q_g(s, a) = sum_{t>=0} gamma^t P(s_t = g | s_0 = s, a_0 = a), i.e.

    Q_g(s, a) = 1{s = g} + gamma * sum_s' p(s'|s,a) V_g(s').

The state-action to goal distance is the discounted first-hit time from t >= 1,

    exp(-d((s,a), g)) = (Q_g(s, a) - 1{s = g}) / V_g(g),

which is the log-ratio log V_g(g) - log Q_g(s, a) whenever s != g.
"""

from __future__ import annotations

import numpy as np

from .distance import INF, DistanceTable, table_size
from .mdp import TabularMDP, TabularPolicy

RESIDUAL = 1e-12


def _policy_matrix(mdp: TabularMDP, policy: TabularPolicy, g: int) -> np.ndarray:
    probs = policy.probs[g] if policy.goal_conditioned else policy.probs
    if probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {probs.shape} does not match MDP")
    return probs


def _evaluate(mdp: TabularMDP, probs: np.ndarray, g: int) -> np.ndarray:
    """Solve Q = r + gamma P pi Q exactly; returns Q[s, a]."""
    S, A = mdp.n_states, mdp.n_actions
    p = mdp.transition
    r = np.zeros((S, A))
    r[g, :] = 1.0
    # V = pi r + gamma P_pi V, then Q = r + gamma P V
    p_pi = np.einsum("sa,sat->st", probs, p)
    r_pi = (probs * r).sum(axis=1)
    v = np.linalg.solve(np.eye(S) - mdp.gamma * p_pi, r_pi)
    return r + mdp.gamma * p @ v


def q_pi(mdp: TabularMDP, policy: TabularPolicy, g: int) -> np.ndarray:
    probs = _policy_matrix(mdp, policy, g)
    q = _evaluate(mdp, probs, g)
    # polish with fixed-point sweeps until the Bellman residual is below threshold
    r = np.zeros_like(q)
    r[g, :] = 1.0
    for _ in range(1000):
        v = (probs * q).sum(axis=1)
        nxt = r + mdp.gamma * mdp.transition @ v
        res = np.abs(nxt - q).max()
        q = nxt
        if res < RESIDUAL:
            break
    return q


def q_star(mdp: TabularMDP, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Optimal goal-reaching Q_g and V_g = max_a Q_g, via policy iteration."""
    S, A = mdp.n_states, mdp.n_actions
    r = np.zeros((S, A))
    r[g, :] = 1.0
    actions = np.zeros(S, dtype=int)
    q = None
    for _ in range(10 * S * A + 10):
        q = _evaluate(mdp, np.eye(A)[actions], g)
        best = q.max(axis=1, keepdims=True)
        # keep current action unless strictly improvable, so the loop terminates
        cur = q[np.arange(S), actions]
        improve = q.max(axis=1) > cur + 1e-14 * np.maximum(1.0, best[:, 0])
        if not improve.any():
            break
        actions = np.where(improve, q.argmax(axis=1), actions)
    for _ in range(1000):
        nxt = r + mdp.gamma * mdp.transition @ q.max(axis=1)
        res = np.abs(nxt - q).max()
        q = nxt
        if res < RESIDUAL:
            break
    return q, q.max(axis=1)


def _hit_ratio(q: np.ndarray, v_goal: float, g: int) -> np.ndarray:
    """exp(-d((s,a), g)) for all (s, a); the goal row drops its t=0 term."""
    h = q.copy()
    h[g, :] -= 1.0
    return np.clip(h, 0.0, None) / v_goal


def _neg_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(x > 0, -np.log(np.where(x > 0, x, 1.0)), INF)


def _assemble(sa_goal: np.ndarray, state_goal: np.ndarray, col_extra: np.ndarray, S: int, A: int) -> DistanceTable:
    """Build the full table from d((s,a),g), d(s,g) and per-(g,a) column offsets.

    Entries toward (g, a) are d(x, g) + col_extra[g, a]; the diagonal is 0.
    """
    n = table_size(S, A)
    v = np.empty((n, n))
    v[:S, :S] = state_goal
    v[S:, :S] = sa_goal.reshape(S * A, S)
    rows_to_states = v[:, :S]
    v[:, S:] = np.repeat(rows_to_states, A, axis=1) + col_extra.reshape(1, S * A)
    np.fill_diagonal(v, 0.0)
    return DistanceTable(v, S, A)


def d_sd_star(mdp: TabularMDP) -> DistanceTable:
    S, A = mdp.n_states, mdp.n_actions
    sa_goal = np.empty((S, A, S))
    for g in range(S):
        q, v = q_star(mdp, g)
        sa_goal[:, :, g] = _neg_log(_hit_ratio(q, v[g], g))
    state_goal = sa_goal.min(axis=1)
    np.fill_diagonal(state_goal, 0.0)
    return _assemble(sa_goal, state_goal, np.zeros((S, A)), S, A)


def d_sd_pi(mdp: TabularMDP, policy: TabularPolicy) -> DistanceTable:
    """Successor distance of a (possibly goal-conditioned) policy.

    Zero-probability actions produce +inf entries in the (g, a) columns.
    """
    S, A = mdp.n_states, mdp.n_actions
    sa_goal = np.empty((S, A, S))
    state_goal = np.empty((S, S))
    col_extra = np.empty((S, A))
    for g in range(S):
        probs = _policy_matrix(mdp, policy, g)
        q = q_pi(mdp, policy, g)
        v_goal = float(probs[g] @ q[g])
        h = _hit_ratio(q, v_goal, g)
        sa_goal[:, :, g] = _neg_log(h)
        # state rows: softmin over the policy, one extra discount step
        state_goal[:, g] = _neg_log((probs * h).sum(axis=1)) - np.log(mdp.gamma)
        col_extra[g] = _neg_log(probs[g])
    np.fill_diagonal(state_goal, 0.0)
    return _assemble(sa_goal, state_goal, col_extra, S, A)


def occupancy_q(mdp: TabularMDP, policy: TabularPolicy, g: int, horizon: int = 200) -> np.ndarray:
    """sum_{t=0}^{horizon} gamma^t P(s_t = g | s_0 = s, a_0 = a) by explicit matrix powers."""
    S, A = mdp.n_states, mdp.n_actions
    probs = _policy_matrix(mdp, policy, g)
    p_pi = np.einsum("sa,sat->st", probs, mdp.transition)
    # distribution of s_1 from every (s, a)
    dist = mdp.transition.reshape(S * A, S)
    total = np.zeros(S * A)
    total += np.repeat(np.arange(S) == g, A).astype(float)
    disc = 1.0
    for _ in range(1, horizon + 1):
        disc *= mdp.gamma
        total += disc * dist[:, g]
        dist = dist @ p_pi
    return total.reshape(S, A)
