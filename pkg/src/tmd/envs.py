"""Desk-scale gridworlds, offline datasets and geometric-horizon batches."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import MDPError, TabularMDP, Trajectory, make_rng, sample_action, step

ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = {"up": (0, -1), "down": (0, 1), "left": (-1, 0), "right": (1, 0), "stay": (0, 0)}
STAY = ACTIONS.index("stay")


@dataclass
class GridSpec:
    """Cells are (x, y) with 0 <= x < width, 0 <= y < height; y grows downwards."""

    width: int
    height: int
    walls: frozenset = frozenset()
    teleport_cells: dict = field(default_factory=dict)  # cell -> {destination cell: prob}
    gamma: float = 0.9

    def __post_init__(self):
        self.walls = frozenset(tuple(c) for c in self.walls)
        self.teleport_cells = {
            tuple(c): {tuple(d): float(p) for d, p in dist.items()}
            for c, dist in self.teleport_cells.items()
        }

    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def free_cells(self) -> list:
        """Cells an agent can occupy, in row-major order; these become the state ids."""
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.walls and (x, y) not in self.teleport_cells
        ]


@dataclass
class Gridworld:
    spec: GridSpec
    mdp: TabularMDP
    cells: list

    def __post_init__(self):
        self.index = {c: i for i, c in enumerate(self.cells)}

    @property
    def n_states(self) -> int:
        return self.mdp.n_states

    def state(self, cell) -> int:
        return self.index[tuple(cell)]

    def coords(self) -> np.ndarray:
        """Per-state (x, y) features scaled to [0, 1]."""
        xy = np.array(self.cells, dtype=np.float64)
        scale = np.array([max(self.spec.width - 1, 1), max(self.spec.height - 1, 1)])
        return xy / scale


def _check_spec(spec: GridSpec) -> list:
    cells = spec.free_cells()
    if not cells:
        raise MDPError("grid has no free cells")
    free = set(cells)
    for c, dist in spec.teleport_cells.items():
        if not spec.in_bounds(c) or c in spec.walls:
            raise MDPError(f"teleport cell {c} is a wall or out of bounds")
        total = sum(dist.values())
        if abs(total - 1.0) > 1e-12 or any(p < 0 for p in dist.values()):
            raise MDPError(f"invalid teleport distribution at {c}: sums to {total}")
        for d in dist:
            if d not in free:
                raise MDPError(f"teleport destination {d} from {c} is not a free cell")
    # one connected component over free + teleport cells under 4-adjacency
    passable = free | set(spec.teleport_cells)
    seen = {cells[0]}
    queue = deque([cells[0]])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (x + dx, y + dy)
            if n in passable and n not in seen:
                seen.add(n)
                queue.append(n)
    missing = passable - seen
    if missing:
        raise MDPError(f"grid is disconnected; unreachable cells: {sorted(missing)[:5]}")
    return cells


def build_gridworld(spec: GridSpec) -> Gridworld:
    cells = _check_spec(spec)
    index = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    p = np.zeros((n, len(ACTIONS), n))
    for i, (x, y) in enumerate(cells):
        for a, name in enumerate(ACTIONS):
            dx, dy = MOVES[name]
            target = (x + dx, y + dy)
            if not spec.in_bounds(target) or target in spec.walls:
                target = (x, y)
            if target in spec.teleport_cells:
                for dest, prob in spec.teleport_cells[target].items():
                    p[i, a, index[dest]] += prob
            else:
                p[i, a, index[target]] = 1.0
    return Gridworld(spec, TabularMDP(p, spec.gamma), cells)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetSpec:
    behavior: str = "uniform-random-walk"  # or region-confined-walk / noisy-expert
    n_trajectories: int = 100
    trajectory_len: int = 20
    seed: int = 0
    regions: list | None = None  # lists of state ids, for region-confined-walk
    epsilon: float = 0.2  # noisy-expert action noise

    BEHAVIORS = ("uniform-random-walk", "region-confined-walk", "noisy-expert")

    def validate(self, n_states: int) -> None:
        if self.behavior not in self.BEHAVIORS:
            raise MDPError(f"unknown behavior {self.behavior!r}")
        if self.n_trajectories < 1 or self.trajectory_len < 1:
            raise MDPError("need at least one trajectory of at least one transition")
        if self.behavior == "region-confined-walk":
            if not self.regions:
                raise MDPError("region-confined-walk needs regions")
            covered = set().union(*map(set, self.regions))
            if covered != set(range(n_states)):
                missing = sorted(set(range(n_states)) - covered)
                raise MDPError(f"regions do not cover states {missing[:10]}")
        if self.behavior == "noisy-expert" and not 0.0 <= self.epsilon <= 1.0:
            raise MDPError(f"epsilon out of range: {self.epsilon}")


@dataclass
class Dataset:
    trajectories: list

    def __post_init__(self):
        if not self.trajectories:
            raise MDPError("empty dataset")
        lengths = np.array([len(t) for t in self.trajectories])
        self.n_transitions = int(lengths.sum())
        # flat layout: traj k occupies states[starts[k] : starts[k] + lengths[k] + 1]
        self.lengths = lengths
        self.starts = np.concatenate([[0], np.cumsum(lengths + 1)[:-1]])
        self.states = np.concatenate([np.asarray(t.states) for t in self.trajectories])
        self.actions = np.concatenate(
            [np.asarray(t.actions + (0,)) for t in self.trajectories]
        )
        # transition index -> flat position of its source state, and of its trajectory end
        self.src = np.concatenate(
            [s + np.arange(n) for s, n in zip(self.starts, lengths)]
        ).astype(np.int64)
        self.last = np.repeat(self.starts + lengths, lengths).astype(np.int64)

    def __len__(self) -> int:
        return len(self.trajectories)

    def check(self, mdp: TabularMDP) -> None:
        for t in self.trajectories:
            t.check(mdp)

    def visited_pairs(self) -> set:
        return {(s, a) for t in self.trajectories for s, a, _ in t.transitions()}

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.trajectories:
                fh.write(json.dumps({"states": list(t.states), "actions": list(t.actions)}))
                fh.write("\n")

    @classmethod
    def load_jsonl(cls, path) -> "Dataset":
        trajs = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                doc = json.loads(line)
                trajs.append(Trajectory(doc["states"], doc["actions"]))
        return cls(trajs)


def _region_actions(mdp: TabularMDP, region: set) -> dict:
    """Actions at each region state whose every successor stays inside the region."""
    allowed = {}
    for s in region:
        ok = [
            a
            for a in range(mdp.n_actions)
            if all(int(s2) in region for s2 in np.flatnonzero(mdp.transition[s, a]))
        ]
        if not ok:
            raise MDPError(f"state {s} has no action that stays inside its region")
        allowed[s] = ok
    return allowed


def _greedy_actions(mdp: TabularMDP, goal: int) -> np.ndarray:
    from .oracle import q_star

    q, _ = q_star(mdp, goal)
    return np.argmax(q, axis=1)


def generate_dataset(mdp: TabularMDP, spec: DatasetSpec) -> Dataset:
    spec.validate(mdp.n_states)
    rng = make_rng(spec.seed)
    n_a = mdp.n_actions
    uniform = np.full(n_a, 1.0 / n_a)
    trajs = []
    if spec.behavior == "region-confined-walk":
        regions = [sorted(set(r)) for r in spec.regions]
        allowed = [_region_actions(mdp, set(r)) for r in regions]
    expert_cache = {}
    for k in range(spec.n_trajectories):
        if spec.behavior == "region-confined-walk":
            r = k % len(regions)
            region, acts = regions[r], allowed[r]
            s = int(region[rng.integers(len(region))])
        else:
            s = int(rng.integers(mdp.n_states))
        if spec.behavior == "noisy-expert":
            goal = int(rng.integers(mdp.n_states))
            if goal not in expert_cache:
                expert_cache[goal] = _greedy_actions(mdp, goal)
            greedy = expert_cache[goal]
        states, actions = [s], []
        for _ in range(spec.trajectory_len):
            if spec.behavior == "region-confined-walk":
                a = int(acts[s][rng.integers(len(acts[s]))])
            elif spec.behavior == "noisy-expert":
                a = int(greedy[s]) if rng.random() >= spec.epsilon else sample_action(uniform, rng)
            else:
                a = sample_action(uniform, rng)
            s = step(mdp, s, a, rng)
            actions.append(a)
            states.append(s)
        trajs.append(Trajectory(tuple(states), tuple(actions)))
    return Dataset(trajs)


# ---------------------------------------------------------------------------
# batches


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    g: np.ndarray
    offsets: np.ndarray  # unclamped geometric draws K

    def __len__(self) -> int:
        return len(self.s)


def sample_geometric(rng: np.random.Generator, gamma: float, size, start: int = 1) -> np.ndarray:
    """K with P(K = k) = (1 - gamma) gamma^(k - start) for k >= start."""
    return rng.geometric(1.0 - gamma, size=size).astype(np.int64) - 1 + start


def sample_batch(
    dataset: Dataset,
    n: int,
    gamma: float,
    rng: np.random.Generator,
    goal_offset_start: int = 1,
) -> Batch:
    if dataset.n_transitions == 0:
        raise MDPError("dataset has no transitions")
    idx = rng.integers(dataset.n_transitions, size=n)
    pos = dataset.src[idx]
    k = sample_geometric(rng, gamma, n, start=goal_offset_start)
    gpos = np.minimum(pos + k, dataset.last[idx])
    return Batch(
        s=dataset.states[pos],
        a=dataset.actions[pos],
        s_next=dataset.states[pos + 1],
        g=dataset.states[gpos],
        offsets=k,
    )


# ---------------------------------------------------------------------------
# reachability helpers used by tests and presets


def reachable_pairs(mdp: TabularMDP, starts) -> set:
    """All (s, a) pairs reachable from `starts` by breadth-first search."""
    seen_s = set(int(s) for s in starts)
    queue = deque(seen_s)
    pairs = set()
    while queue:
        s = queue.popleft()
        for a in range(mdp.n_actions):
            pairs.add((s, a))
            for s2 in np.flatnonzero(mdp.transition[s, a]):
                s2 = int(s2)
                if s2 not in seen_s:
                    seen_s.add(s2)
                    queue.append(s2)
    return pairs
