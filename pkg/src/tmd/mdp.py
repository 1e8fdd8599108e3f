"""Finite controlled Markov processes, tabular policies and rollouts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12


class MDPError(ValueError):
    pass


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; every random draw in the package goes through one of these."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray  # p[s, a, s']
    gamma: float
    state_names: tuple | None = None
    action_names: tuple | None = None

    def __post_init__(self):
        p = np.ascontiguousarray(self.transition, dtype=np.float64)
        p.setflags(write=False)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "gamma", float(self.gamma))
        validate_mdp(self)
        # cumulative rows for inverse-cdf sampling
        cdf = np.cumsum(p, axis=-1)
        cdf[..., -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_json(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TabularMDP":
        missing = {"n_states", "n_actions", "gamma", "transition"} - set(doc)
        if missing:
            raise MDPError(f"MDP document lacks {sorted(missing)}")
        p = np.asarray(doc["transition"], dtype=np.float64)
        if p.shape != (doc["n_states"], doc["n_actions"], doc["n_states"]):
            raise MDPError(
                f"transition shape {p.shape} does not match "
                f"n_states={doc['n_states']}, n_actions={doc['n_actions']}"
            )
        return cls(p, doc["gamma"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TabularMDP":
        return cls.from_json(json.loads(Path(path).read_text()))


def validate_mdp(mdp: TabularMDP) -> None:
    p = mdp.transition
    if p.ndim != 3 or p.shape[0] != p.shape[2] or p.shape[0] < 1 or p.shape[1] < 1:
        raise MDPError(f"transition must have shape (S, A, S), got {p.shape}")
    if not 0.0 < mdp.gamma < 1.0:
        raise MDPError(f"discount out of range: gamma={mdp.gamma}")
    if not np.all(np.isfinite(p)):
        raise MDPError("transition contains non-finite entries")
    neg = np.argwhere(p < 0)
    if len(neg):
        s, a, s2 = neg[0]
        raise MDPError(f"negative probability p[{s}][{a}][{s2}]={float(p[s, a, s2])}")
    sums = p.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if len(bad):
        s, a = bad[0]
        raise MDPError(f"row (s={s}, a={a}) sums to {float(sums[s, a])!r}, expected 1")


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """pi[s, a], or goal-conditioned pi[g, s, a]."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim not in (2, 3):
            raise MDPError(f"policy must be 2-d or 3-d, got shape {probs.shape}")
        if np.any(probs < 0):
            raise MDPError("policy has negative probabilities")
        sums = probs.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
        if len(bad):
            raise MDPError(f"policy row {tuple(bad[0])} sums to {float(sums[tuple(bad[0])])!r}")
        object.__setattr__(self, "probs", probs)

    @property
    def goal_conditioned(self) -> bool:
        return self.probs.ndim == 3

    def action_probs(self, s: int, g: int | None = None) -> np.ndarray:
        if self.goal_conditioned:
            if g is None:
                raise MDPError("goal-conditioned policy needs a goal")
            return self.probs[g, s]
        return self.probs[s]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions)
        return cls(np.eye(n_actions)[actions])


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    actions: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.actions) != len(self.states) - 1:
            raise MDPError(
                f"trajectory has {len(self.states)} states but {len(self.actions)} actions"
            )

    def __len__(self) -> int:
        """Number of transitions."""
        return len(self.actions)

    def transitions(self):
        for t, a in enumerate(self.actions):
            yield self.states[t], a, self.states[t + 1]

    def check(self, mdp: TabularMDP) -> None:
        for t, (s, a, s2) in enumerate(self.transitions()):
            if mdp.transition[s, a, s2] <= 0:
                raise MDPError(f"transition {t} ({s}, {a}) -> {s2} has zero probability")


def _check_index(mdp: TabularMDP, s: int, a: int) -> None:
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range [0, {mdp.n_states})")
    if not 0 <= a < mdp.n_actions:
        raise IndexError(f"action {a} out of range [0, {mdp.n_actions})")


def step(mdp: TabularMDP, s: int, a: int, rng: np.random.Generator) -> int:
    _check_index(mdp, s, a)
    u = rng.random()
    return int(np.searchsorted(mdp._cdf[s, a], u, side="right"))


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(probs) - 1))


def rollout(
    mdp: TabularMDP,
    policy: TabularPolicy,
    s0: int,
    horizon: int,
    rng: np.random.Generator,
    goal: int | None = None,
) -> Trajectory:
    if horizon < 1:
        raise MDPError(f"horizon must be >= 1, got {horizon}")
    states, actions = [int(s0)], []
    s = int(s0)
    for _ in range(horizon):
        a = sample_action(policy.action_probs(s, goal), rng)
        s = step(mdp, s, a, rng)
        actions.append(a)
        states.append(s)
    return Trajectory(tuple(states), tuple(actions))


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    rng: np.random.Generator,
    stochastic: bool = True,
    branching: int = 3,
) -> TabularMDP:
    """Random MDP whose uniform policy visits every state from every state.

    A random Hamiltonian cycle is threaded through action 0 (deterministic
    case) or mixed into action 0 (stochastic case), which guarantees strong
    connectivity and therefore finite optimal distances everywhere.
    """
    cycle = rng.permutation(n_states)
    nxt = np.empty(n_states, dtype=int)
    nxt[cycle] = np.roll(cycle, -1)
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            if not stochastic:
                target = nxt[s] if a == 0 else rng.integers(n_states)
                p[s, a, target] = 1.0
            else:
                k = min(branching, n_states)
                succ = rng.choice(n_states, size=k, replace=False)
                w = rng.dirichlet(np.ones(k))
                p[s, a, succ] += w
                if a == 0:
                    p[s, a] *= 0.5
                    p[s, a, nxt[s]] += 0.5
    p /= p.sum(axis=-1, keepdims=True)
    return TabularMDP(p, gamma)
