"""Property suites behind ``tmd verify <suite>``.

Each suite returns a list of Check records; a suite passes when every check does.
All randomness comes from fixed seeds so a failure is reproducible by rerunning.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .autodiff import grad as autodiff_grad
from .baselines import QrlConfig, loss_qrl
from .distance import DistanceTable, is_quasimetric, op_I, op_P, op_T, project_quasimetric, sup_change, tmd_fixed_point, tmd_step
from .envs import Batch
from .losses import TmdConfig, bregman_dt, loss_i, loss_nce, loss_t, loss_tmd
from .mdp import TabularPolicy, make_rng, random_mdp
from .mrn import MrnConfig, init_encoders
from .optim import Adam
from .oracle import d_sd_pi, d_sd_star, occupancy_q, q_pi, q_star
from .policy import init_policy, loss_policy

SUITES = ("operators", "oracle", "gradients", "divergence", "end-to-end")


@dataclass
class Check:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn) -> Check:
    t0 = time.perf_counter()
    ok, detail = fn()
    return Check(name, bool(ok), detail, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# random problem generators shared with the tests


def mdp_suite(n: int = 50, seed: int = 0) -> list:
    """Random tabular MDPs with at most 25 states and 4 actions, half stochastic."""
    rng = make_rng(seed)
    out = []
    for k in range(n):
        S = int(rng.integers(2, 26))
        A = int(rng.integers(1, 5))
        gamma = float(rng.uniform(0.5, 0.95))
        out.append(random_mdp(S, A, gamma, rng, stochastic=(k % 2 == 1)))
    return out


def random_table(rng, S: int, A: int, inf_frac: float = 0.1, integer: bool = False) -> DistanceTable:
    """Random table in the domain (zero diagonal, some infinities).

    Integer-valued entries make min-plus sums exact, so fixed-point comparisons
    can be made without a tolerance.
    """
    n = S + S * A
    v = rng.integers(1, 20, size=(n, n)).astype(np.float64) if integer else rng.exponential(2.0, size=(n, n))
    v[rng.random((n, n)) < inf_frac] = np.inf
    np.fill_diagonal(v, 0.0)
    return DistanceTable(v, S, A)


def uniform_policy(mdp) -> TabularPolicy:
    return TabularPolicy(np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions))


# ---------------------------------------------------------------------------
# operators


def check_convergence(mdps=None, tol: float = 1e-6) -> tuple[bool, str]:
    mdps = mdps if mdps is not None else mdp_suite()
    worst, iters = 0.0, []
    for mdp in mdps:
        start = d_sd_pi(mdp, uniform_policy(mdp))
        res = tmd_fixed_point(mdp, start, tol=1e-12)
        err = sup_change(res.table.values, d_sd_star(mdp).values)
        worst = max(worst, err)
        iters.append(res.iterations)
    return worst < tol, f"{len(mdps)} MDPs, worst sup error {worst:.2e}, iterations {min(iters)}..{max(iters)}"


def check_uniqueness(mdps=None, tol: float = 1e-9) -> tuple[bool, str]:
    mdps = mdps if mdps is not None else mdp_suite()
    worst = 0.0
    for mdp in mdps:
        star = d_sd_star(mdp)
        worst = max(worst, sup_change(tmd_step(mdp, star).values, star.values))
    return worst <= tol, f"{len(mdps)} MDPs, worst change under one step {worst:.2e}"


def check_path_laws(n: int = 1000, seed: int = 1) -> tuple[bool, str]:
    rng = make_rng(seed)
    failures = []
    for k in range(n):
        S, A = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        d = random_table(rng, S, A, integer=True)
        if k % 2:
            d = project_quasimetric(d)  # half the draws are quasimetrics already
        relaxed = op_P(d)
        if np.any(relaxed.values > d.values):
            failures.append(f"draw {k}: relaxation increased an entry")
        fixed = sup_change(relaxed.values, d.values) == 0.0
        if bool(is_quasimetric(d)) != fixed:
            failures.append(f"draw {k}: quasimetric={bool(is_quasimetric(d))} but fixed={fixed}")
        it = d
        for _ in range(d.values.shape[0] + 1):
            nxt = op_P(it)
            if sup_change(nxt.values, it.values) == 0.0:
                break
            it = nxt
        err = sup_change(project_quasimetric(d).values, it.values)
        if err >= 1e-12:
            failures.append(f"draw {k}: closure differs from iterated relaxation by {err:.2e}")
    return not failures, f"{n} tables" + ("" if not failures else f"; {failures[0]} (+{len(failures) - 1} more)")


def check_monotone(n: int = 200, seed: int = 2) -> tuple[bool, str]:
    rng = make_rng(seed)
    bad = 0
    for _ in range(n):
        S, A = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        mdp = random_mdp(S, A, 0.9, rng, stochastic=True)
        lo = random_table(rng, S, A, inf_frac=0.0)
        hi = lo.with_values(lo.values + rng.exponential(1.0, lo.values.shape) * (1 - np.eye(lo.values.shape[0])))
        for op in (op_I, op_P, lambda d: op_T(mdp, d)):
            if np.any(op(lo).values > op(hi).values + 1e-12):
                bad += 1
    return bad == 0, f"{n} ordered pairs through I, P and T; {bad} violations"


# ---------------------------------------------------------------------------
# oracle


def check_occupancy(mdps=None, tol: float = 1e-6) -> tuple[bool, str]:
    mdps = mdps if mdps is not None else mdp_suite(20, seed=3)
    worst = 0.0
    for k, mdp in enumerate(mdps):
        rng = make_rng([3, k])
        pol = TabularPolicy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
        for g in range(mdp.n_states):
            worst = max(worst, float(np.max(np.abs(q_pi(mdp, pol, g) - occupancy_q(mdp, pol, g, horizon=400)))))
    return worst < tol, f"{len(mdps)} MDPs, all goals, worst |Q - occupancy| {worst:.2e}"


def check_q_relation(mdps=None, tol: float = 1e-9) -> tuple[bool, str]:
    mdps = mdps if mdps is not None else mdp_suite(20, seed=4)
    worst = 0.0
    for mdp in mdps:
        d = d_sd_star(mdp).sa_to_state()  # [s, a, g]
        for g in range(mdp.n_states):
            q, v = q_star(mdp, g)
            off = np.arange(mdp.n_states) != g
            lhs = np.exp(-d[off, :, g]) * v[g]
            worst = max(worst, float(np.max(np.abs(lhs - q[off]))))
    return worst < tol, f"exp(-d*) V*(g) against Q* away from the goal, worst {worst:.2e}"


def check_dominance(mdps=None) -> tuple[bool, str]:
    mdps = mdps if mdps is not None else mdp_suite(20, seed=5)
    bad = 0
    for k, mdp in enumerate(mdps):
        rng = make_rng([5, k])
        pol = TabularPolicy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
        star, dpi = d_sd_star(mdp).values, d_sd_pi(mdp, pol).values
        finite = np.isfinite(dpi)
        bad += int(np.any(star[finite] > dpi[finite] + 1e-9))
        bad += int(not is_quasimetric(d_sd_star(mdp), tol=1e-9))
    return bad == 0, f"{len(mdps)} MDPs: d* is a quasimetric and below d_pi; {bad} failures"


# ---------------------------------------------------------------------------
# divergence


def check_divergence_minimizer(n: int = 100, seed: int = 6, tol: float = 1e-4) -> tuple[bool, str]:
    from scipy.optimize import minimize_scalar

    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n):
        targets = rng.exponential(2.0, size=int(rng.integers(1, 50)))
        exact = -np.log(np.mean(np.exp(-targets)))
        res = minimize_scalar(lambda d: float(np.mean(bregman_dt(d, targets))), bounds=(-5, 30), method="bounded",
                              options={"xatol": 1e-10})
        worst = max(worst, abs(res.x - exact))
    return worst < tol, f"{n} target samples, worst |argmin - (-log mean exp(-d'))| {worst:.2e}"


# ---------------------------------------------------------------------------
# gradients


def _flatten(arrays: dict) -> tuple[np.ndarray, list]:
    keys = sorted(arrays)
    return np.concatenate([arrays[k].ravel() for k in keys]), keys


def fd_check(fn, arrays: dict, rng, h: float = 1e-6, rtol: float = 1e-4, directions: int = 3):
    """Directional finite differences against the analytic gradient.

    Returns (worst relative error, number of skipped directions). A direction is
    skipped when left and right one-sided differences disagree, meaning the
    probe straddled a kink of relu/max where no derivative exists.
    """
    _, grads = autodiff_grad(fn, arrays)
    base_value = fn({k: Tensor(v) for k, v in arrays.items()}).item()
    worst, skipped = 0.0, 0
    for _ in range(directions):
        u = {k: rng.standard_normal(v.shape) for k, v in arrays.items()}
        norm = np.sqrt(sum(float(np.sum(x * x)) for x in u.values()))
        u = {k: x / norm for k, x in u.items()}
        analytic = sum(float(np.sum(grads[k] * u[k])) for k in arrays)

        def at(t):
            return fn({k: Tensor(v + t * u[k]) for k, v in arrays.items()}).item()

        plus, minus = at(h), at(-h)
        right, left = (plus - base_value) / h, (base_value - minus) / h
        scale = max(abs(analytic), abs(right), abs(left), 1e-6)
        if abs(right - left) > 10 * rtol * scale + 1e-5:
            skipped += 1
            continue
        central = (plus - minus) / (2 * h)
        worst = max(worst, abs(central - analytic) / max(abs(analytic), abs(central), 1e-3))
    return worst, skipped


def random_batch(rng, S: int, A: int, n: int) -> Batch:
    return Batch(
        s=rng.integers(S, size=n), a=rng.integers(A, size=n), s_next=rng.integers(S, size=n),
        g=rng.integers(S, size=n), offsets=np.ones(n, dtype=np.int64),
    )


def gradient_cases(draws: int = 100, seed: int = 7):
    """Yield (loss name, fn(net) -> Tensor, arrays) for random parameter/batch draws."""
    rng = make_rng(seed)
    cfg_mrn = MrnConfig(components=4, size=3, hidden=(16,), layer_norm=False)
    names = ("nce", "i", "t", "policy", "tmd", "qrl")
    for k in range(draws):
        S, A, n = int(rng.integers(3, 8)), int(rng.integers(2, 5)), int(rng.integers(3, 9))
        mrn = replace(cfg_mrn, layer_norm=bool(k % 2))
        params = init_encoders(mrn, np.eye(S), A, seed=[seed, k])
        # perturb the snapshot so target and live weights differ
        params.arrays = {key: v + 0.1 * rng.standard_normal(v.shape) for key, v in params.arrays.items()}
        batch = random_batch(rng, S, A, n)
        cfg = TmdConfig(reduction=("sum", "mean")[k % 2], divergence=("dt", "l2", "bce")[k % 3], clip_t=50.0)
        name = names[k % len(names)]
        if name == "policy":
            pi = init_policy(np.eye(S), A, hidden=(16,), seed=[seed, k, 1])
            yield name, (lambda net, pi=pi, p=params, b=batch, c=cfg: loss_policy(pi, p, b, c, net)), pi.arrays
            continue
        fn = {
            "nce": lambda net, p=params, b=batch, c=cfg: loss_nce(p, b, net, c),
            "i": lambda net, p=params, b=batch, c=cfg: loss_i(p, b, net, c),
            "t": lambda net, p=params, b=batch, c=cfg: loss_t(p, b, c, net),
            "tmd": lambda net, p=params, b=batch, c=cfg: loss_tmd(p, b, c, net).total,
            "qrl": lambda net, p=params, b=batch: loss_qrl(p, b, QrlConfig(), net),
        }[name]
        yield name, fn, params.arrays


def check_gradients(draws: int = 100, rtol: float = 1e-4) -> tuple[bool, str]:
    rng = make_rng(8)
    worst, skipped, total = {}, 0, 0
    for name, fn, arrays in gradient_cases(draws):
        err, sk = fd_check(fn, arrays, rng, rtol=rtol)
        worst[name] = max(worst.get(name, 0.0), err)
        skipped += sk
        total += 3
    ok = all(v < rtol for v in worst.values()) and skipped < total // 2
    summary = ", ".join(f"{k} {v:.1e}" for k, v in sorted(worst.items()))
    return ok, f"{draws} draws; worst relative error {summary}; {skipped}/{total} directions skipped at kinks"


def check_stop_gradient(draws: int = 20, seed: int = 9) -> tuple[bool, str]:
    rng = make_rng(seed)
    worst = 0.0
    for k in range(draws):
        S, A, n = 5, 3, 6
        params = init_encoders(MrnConfig(components=4, size=3, hidden=(16,)), np.eye(S), A, seed=[seed, k])
        params.arrays = {key: v + 0.1 * rng.standard_normal(v.shape) for key, v in params.arrays.items()}
        batch = random_batch(rng, S, A, n)
        _, grads = autodiff_grad(lambda net: loss_t(params, batch, TmdConfig(), net), params.arrays)
        worst = max(worst, max(float(np.max(np.abs(g))) for key, g in grads.items() if key.startswith("psi.")))
    return worst == 0.0, f"{draws} draws, largest |d loss_t / d psi| = {worst:.1e}"


# ---------------------------------------------------------------------------
# contrastive optimum on a tiny MDP


def nce_population(mdp, behavior: TabularPolicy, state_weights: np.ndarray):
    """Exact marginal p(x) over state-actions and p(g | x) under geometric k >= 1 futures."""
    S, A, gamma = mdp.n_states, mdp.n_actions, mdp.gamma
    p_x = (state_weights[:, None] * behavior.probs).ravel()
    P = np.einsum("sat,tb->satb", mdp.transition, behavior.probs).reshape(S * A, S * A)
    T = mdp.transition.reshape(S * A, S)
    # (1 - gamma) sum_{k>=1} gamma^(k-1) P(s_k = g | x): rows sum to one
    p_g_x = (1 - gamma) * np.linalg.solve(np.eye(S * A) - gamma * P, T)
    return p_x, p_g_x


def fit_tabular_nce(p_x: np.ndarray, p_g_x: np.ndarray, steps: int = 4000, lr: float = 0.05) -> np.ndarray:
    """Free critic table f[x, g] minimizing the exact two-candidate backward NCE loss.

    The positive (x, g) is drawn from the joint and the competing x' from the
    marginal; the objective is convex in the table, so Adam reaches its optimum.
    """
    X, S = p_g_x.shape
    w = (p_x[:, None] * p_g_x)[:, :, None] * p_x[None, None, :]  # (x, g, x')
    table = {"f": np.zeros((X, S))}
    opt = Adam(table, lr=lr)
    for _ in range(steps):
        f = table["f"]
        pos = f[:, :, None]
        neg = f.T[None, :, :]
        top = np.maximum(pos, neg)
        lse = top + np.log(np.exp(pos - top) + np.exp(neg - top))
        g_pos = (w * (np.exp(pos - lse) - 1.0)).sum(axis=2)
        g_neg = (w * np.exp(neg - lse)).sum(axis=0).T
        opt.step(table, {"f": g_pos + g_neg})
    return table["f"]


def centered(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=0, keepdims=True)


def check_nce_optimum(tol: float = 0.05, seed: int = 10) -> tuple[bool, str]:
    rng = make_rng(seed)
    S, A = 5, 2
    mdp = random_mdp(S, A, 0.8, rng, stochastic=True)
    behavior = TabularPolicy(rng.dirichlet(np.ones(A) * 3, size=S))
    p_x, p_g_x = nce_population(mdp, behavior, rng.dirichlet(np.ones(S) * 3))
    learned = fit_tabular_nce(p_x, p_g_x)
    ratio = np.log(p_g_x) - np.log(p_x @ p_g_x)[None, :]
    err = float(np.max(np.abs(centered(learned) - centered(ratio))))
    return err < tol, f"{S}-state MDP, max |centered critic - centered log-ratio| {err:.3f}"


# ---------------------------------------------------------------------------
# end-to-end: determinism, resumption, zero-step checkpoint


def _tiny_config(tmp: Path):
    from .config import ExperimentConfig

    return ExperimentConfig.from_dict(
        {
            "environment": {"preset": "open7"},
            "dataset": {"path": "data.jsonl", "behavior": "region-confined-walk", "regions": "quadrants7",
                        "n_trajectories": 80, "trajectory_len": 5},
            "eval": {"tasks": "quadrant-cross", "horizon": 24, "episodes": 5},
            "train": {"steps": 40, "log_every": 5, "train_policy": True, "out_dir": "run"},
            "model": {"hidden": [16], "policy_hidden": [16]},
            "tmd": {"batch_size": 16},
        },
        tmp,
    )


def check_end_to_end() -> tuple[bool, str]:
    from .train import gen_data, read_metrics, train

    problems = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = _tiny_config(tmp)
        gen_data(cfg)
        a = train(cfg, out_dir=tmp / "a")
        b = train(cfg, out_dir=tmp / "b")
        if (tmp / "a" / "metrics.csv").read_bytes() != (tmp / "b" / "metrics.csv").read_bytes():
            problems.append("same seed gave different metric files")
        half = replace(cfg, train=replace(cfg.train, steps=20, checkpoint_every=20))
        train(half, out_dir=tmp / "c")
        train(cfg, resume=tmp / "c" / "ckpt_0000020.npz", out_dir=tmp / "c")
        if read_metrics(tmp / "c" / "metrics.csv") != read_metrics(tmp / "a" / "metrics.csv"):
            problems.append("resumed run diverged from the uninterrupted one")
        zero = replace(cfg, train=replace(cfg.train, steps=0))
        z = train(zero, out_dir=tmp / "z")
        init = init_encoders(cfg.model.mrn(), np.eye(a.state.params.n_states), 5, seed=cfg.train.seed)
        if any(not np.array_equal(z.state.params.arrays[k], init.arrays[k]) for k in init.arrays):
            problems.append("zero-step checkpoint differs from initialization")
        del b
    return not problems, "determinism, resumption and zero-step checks" + (f": {'; '.join(problems)}" if problems else " hold")


def run_suite(name: str) -> list:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    plan = {
        "operators": [
            ("convergence to d* from d_beta", check_convergence),
            ("fixed-point uniqueness", check_uniqueness),
            ("path-relaxation laws", check_path_laws),
            ("operator monotonicity", check_monotone),
        ],
        "oracle": [
            ("occupancy cross-check", check_occupancy),
            ("Q* relation", check_q_relation),
            ("d* dominance and quasimetric", check_dominance),
            ("contrastive optimum", check_nce_optimum),
        ],
        "gradients": [
            ("finite differences", check_gradients),
            ("stop-gradient contract", check_stop_gradient),
        ],
        "divergence": [("D_T minimizer", check_divergence_minimizer)],
        "end-to-end": [("training pipeline", check_end_to_end)],
    }[name]
    return [_timed(label, fn) for label, fn in plan]
