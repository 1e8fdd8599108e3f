"""Goal-conditioned policies from learned or exact distances, and their evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat
from .distance import DistanceTable
from .envs import STAY, Batch
from .losses import Embeddings, TmdConfig
from .mdp import MDPError, TabularMDP, TabularPolicy, make_rng
from .mrn import EncoderParams, _init_mlp, mlp, mrn_pairwise


@dataclass
class PolicyParams:
    features: np.ndarray  # per-state features shared with the encoders
    n_actions: int
    arrays: dict
    layer_norm: bool = False

    def tensors(self, requires_grad: bool = False) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.features, self.n_actions, {k: v.copy() for k, v in self.arrays.items()}, self.layer_norm)


def init_policy(features: np.ndarray, n_actions: int, hidden=(64, 64), seed: int = 0) -> PolicyParams:
    rng = make_rng(seed)
    features = np.asarray(features, dtype=np.float64)
    arrays = {}
    _init_mlp(rng, "pi", [2 * features.shape[1], *hidden, n_actions], arrays)
    return PolicyParams(features, n_actions, arrays)


def policy_logits(net: dict, pi: PolicyParams, states, goals) -> Tensor:
    x = Tensor(pi.features[np.asarray(states)])
    g = Tensor(pi.features[np.asarray(goals)])
    return mlp(net, "pi", concat([x, g], axis=-1), pi.layer_norm)


def loss_policy(
    pi: PolicyParams,
    params: EncoderParams,
    batch: Batch,
    cfg: TmdConfig,
    net: dict | None = None,
) -> Tensor:
    """Distance-minimizing extraction with goal mixing (lam) and behavior cloning (alpha).

    Expectations over actions are exact sums under the policy softmax. With the
    "sum" reduction every term sits inside the double sum over (i, j); with
    "mean" each term is averaged over its own index set.
    """
    net = net or pi.tensors()
    n, A = len(batch), pi.n_actions
    emb = Embeddings(params.tensors(), params, batch)
    # dist[i, a, j] = d(phi(s_i, a), psi(g_j)), constant w.r.t. the policy
    z_sa = emb.phi_all.data.reshape(n * A, -1)
    dist = mrn_pairwise(Tensor(z_sa), emb.psi_g.detach(), params.cfg).data.reshape(n, A, n)
    # probabilities for every (s_i, g_j)
    s_rep = np.repeat(batch.s, n)
    g_rep = np.tile(batch.g, n)
    logits = policy_logits(net, pi, s_rep, g_rep).reshape(n, n, A)
    probs = logits.softmax(axis=-1)
    cross = (probs * np.transpose(dist, (0, 2, 1))).sum(axis=-1)  # (i, j)
    idx = np.arange(n)
    own = cross[idx, idx]  # goal g_i for state s_i
    logp_own = logits[idx, idx].log_softmax(axis=-1)
    ce = -(logp_own * np.eye(A)[batch.a]).sum(axis=-1)
    if cfg.reduction == "sum":
        return (1.0 - cfg.lam) * cross.sum() + n * (cfg.lam * own.sum() + cfg.alpha * ce.sum())
    return (1.0 - cfg.lam) * cross.mean() + cfg.lam * own.mean() + cfg.alpha * ce.mean()


# ---------------------------------------------------------------------------
# greedy policies as action tables [g, s]


@dataclass
class ExtractedPolicy:
    policy: TabularPolicy  # goal-conditioned, deterministic
    unreachable: np.ndarray  # bool [g, s]

    @property
    def actions(self) -> np.ndarray:
        return np.argmax(self.policy.probs, axis=-1)


def extract_tabular_policy(d: DistanceTable) -> ExtractedPolicy:
    """pi(g, s) = argmin_a d((s, a), g), ties to the lowest action id."""
    S, A = d.n_states, d.n_actions
    sa = d.sa_to_state()  # [s, a, g]
    per_goal = np.transpose(sa, (2, 0, 1))  # [g, s, a]
    unreachable = np.all(np.isinf(per_goal), axis=-1)
    actions = np.argmin(per_goal, axis=-1)
    actions[unreachable] = STAY if A > STAY else 0
    return ExtractedPolicy(TabularPolicy(np.eye(A)[actions]), unreachable)


def action_table(policy, n_states: int) -> np.ndarray:
    """Greedy action for every (goal, state)."""
    if isinstance(policy, ExtractedPolicy):
        return policy.actions
    if isinstance(policy, TabularPolicy):
        probs = policy.probs
        if not policy.goal_conditioned:
            probs = np.broadcast_to(probs, (n_states, *probs.shape))
        return np.argmax(probs, axis=-1)
    if isinstance(policy, PolicyParams):
        g, s = np.meshgrid(np.arange(n_states), np.arange(n_states), indexing="ij")
        logits = policy_logits(policy.tensors(), policy, s.ravel(), g.ravel()).data
        return np.argmax(logits, axis=-1).reshape(n_states, n_states)
    table = np.asarray(policy)
    if table.shape != (n_states, n_states):
        raise MDPError(f"action table must be (goals, states), got {table.shape}")
    return table


def critic_action_table(params: EncoderParams) -> np.ndarray:
    """argmin_a d(phi(s, a), psi(g)) for every (g, s) under learned encoders."""
    from .mrn import embed_all

    z_s, z_sa = embed_all(params)
    S, A = params.n_states, params.n_actions
    dist = mrn_pairwise(Tensor(z_sa.reshape(S * A, -1)), Tensor(z_s), params.cfg).data.reshape(S, A, S)
    return np.argmin(np.transpose(dist, (2, 0, 1)), axis=-1)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalTask:
    start: int
    goal: int
    horizon: int
    episodes: int = 100

    def __post_init__(self):
        if self.start == self.goal:
            raise MDPError("evaluation task needs start != goal")
        if self.horizon < 1 or self.episodes < 1:
            raise MDPError("horizon and episodes must be positive")


@dataclass
class EvalReport:
    tasks: list = field(default_factory=list)  # dicts: task_id, successes, episodes, rate

    @property
    def rate(self) -> float:
        total = sum(t["episodes"] for t in self.tasks)
        return sum(t["successes"] for t in self.tasks) / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "tasks": self.tasks,
            "aggregate": {
                "successes": sum(t["successes"] for t in self.tasks),
                "episodes": sum(t["episodes"] for t in self.tasks),
                "rate": self.rate,
            },
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def run_episodes(mdp: TabularMDP, actions: np.ndarray, task: EvalTask, rng) -> np.ndarray:
    """Vectorized rollouts; each episode owns one column of uniform draws."""
    u = rng.random((task.horizon, task.episodes))
    cdf = mdp._cdf
    s = np.full(task.episodes, task.start)
    done = np.zeros(task.episodes, dtype=bool)
    for t in range(task.horizon):
        a = actions[task.goal, s]
        nxt = np.minimum((cdf[s, a] <= u[t, :, None]).sum(axis=1), mdp.n_states - 1)
        s = np.where(done, s, nxt)
        done |= s == task.goal
        if done.all():
            break
    return done


def evaluate(mdp: TabularMDP, policy, tasks, seed=0) -> EvalReport:
    actions = action_table(policy, mdp.n_states)
    report = EvalReport()
    for k, task in enumerate(tasks):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), k])))
        done = run_episodes(mdp, actions, task, rng)
        report.tasks.append(
            {"task_id": k, "successes": int(done.sum()), "episodes": task.episodes, "rate": float(done.mean())}
        )
    return report


def reach_probability(mdp: TabularMDP, actions: np.ndarray, start: int, goal: int, horizon: int) -> float:
    """Exact P(reach goal within horizon) by forward dynamic programming."""
    S = mdp.n_states
    step_matrix = mdp.transition[np.arange(S), actions[goal]]  # (S, S)
    mass = np.zeros(S)
    mass[start] = 1.0
    reached = 0.0
    for _ in range(horizon):
        mass = mass @ step_matrix
        reached += mass[goal]
        mass[goal] = 0.0
    return float(reached)
