"""Training loop, evaluation and ablation runs driven by an ExperimentConfig."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import loss_qrl
from .config import ExperimentConfig
from .envs import Dataset, Gridworld, generate_dataset, sample_batch
from .losses import loss_tmd
from .mdp import make_rng
from .mrn import EncoderParams, grad, init_encoders, load_checkpoint, save_checkpoint, snapshot_target
from .optim import Adam
from .policy import EvalReport, PolicyParams, critic_action_table, evaluate, init_policy, loss_policy
from .autodiff import grad as raw_grad

METRIC_COLUMNS = ("step", "nce", "l_i", "l_t", "total", "policy")

# fixed offsets so the encoder, policy and batch streams never share a seed
_POLICY_STREAM = 1
_BATCH_STREAM = 2


def features_for(gw: Gridworld, kind: str) -> np.ndarray:
    if kind == "coords":
        return gw.coords()
    return np.eye(gw.n_states)


def gen_data(cfg: ExperimentConfig, gw: Gridworld | None = None) -> Path:
    gw = gw or cfg.environment.build()
    ds = generate_dataset(gw.mdp, cfg.dataset.dataset_spec(gw))
    path = cfg.dataset_path
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.save_jsonl(path)
    return path


def load_dataset(cfg: ExperimentConfig, gw: Gridworld) -> Dataset:
    path = cfg.dataset_path
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path} (run gen-data first)")
    ds = Dataset.load_jsonl(path)
    ds.check(gw.mdp)
    return ds


@dataclass
class TrainState:
    params: EncoderParams
    pi: PolicyParams
    critic_opt: Adam
    policy_opt: Adam
    rng: np.random.Generator
    step: int = 0


def init_state(cfg: ExperimentConfig, gw: Gridworld) -> TrainState:
    seed = cfg.train.seed
    feats = features_for(gw, cfg.train.features)
    A = gw.mdp.n_actions
    params = init_encoders(cfg.model.mrn(), feats, A, seed=seed)
    pi = init_policy(feats, A, tuple(cfg.model.policy_hidden), seed=[seed, _POLICY_STREAM])
    pi.layer_norm = cfg.model.layer_norm
    lr = cfg.tmd.lr
    return TrainState(params, pi, Adam(params.arrays, lr=lr), Adam(pi.arrays, lr=lr), make_rng([seed, _BATCH_STREAM]))


def _critic_step(state: TrainState, cfg: ExperimentConfig, batch) -> dict:
    params = state.params
    snapshot_target(params)
    holder = {}
    if cfg.train.method == "qrl":

        def fn(net):
            return loss_qrl(params, batch, cfg.qrl, net)

        total, grads = grad(params, fn)
        row = {"nce": math.nan, "l_i": math.nan, "l_t": math.nan, "total": total}
    else:

        def fn(net):
            holder["r"] = loss_tmd(params, batch, cfg.tmd, net)
            return holder["r"].total

        _, grads = grad(params, fn)
        row = holder["r"].row()
    state.critic_opt.step(params.arrays, grads)
    return row


def _policy_step(state: TrainState, cfg: ExperimentConfig, batch) -> float:
    pi = state.pi
    value, grads = raw_grad(lambda net: loss_policy(pi, state.params, batch, cfg.tmd, net), pi.arrays)
    state.policy_opt.step(pi.arrays, grads)
    return value


def save_state(path, state: TrainState, cfg: ExperimentConfig) -> None:
    extra = {f"pi/{k}": v for k, v in state.pi.arrays.items()}
    extra.update(state.critic_opt.state("adam_critic/"))
    extra.update(state.policy_opt.state("adam_policy/"))
    state.params.step = state.step
    meta = {
        "experiment": cfg.to_dict(),
        "adam_t": [state.critic_opt.t, state.policy_opt.t],
        "rng_state": state.rng.bit_generator.state,
        "policy_layer_norm": state.pi.layer_norm,
    }
    save_checkpoint(path, state.params, extra, _jsonable(meta))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _unjson(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjson(v) for v in obj]
    return obj


def load_state(path, cfg: ExperimentConfig, gw: Gridworld) -> TrainState:
    params, extra, meta = load_checkpoint(path)
    state = init_state(cfg, gw)
    state.params = params
    pi_arrays = {k[3:]: v for k, v in extra.items() if k.startswith("pi/")}
    state.pi = PolicyParams(params.features, params.n_actions, pi_arrays, meta.get("policy_layer_norm", False))
    state.critic_opt = Adam(params.arrays, lr=cfg.tmd.lr)
    state.policy_opt = Adam(state.pi.arrays, lr=cfg.tmd.lr)
    t_c, t_p = meta["adam_t"]
    state.critic_opt.load_state("adam_critic/", extra, t_c)
    state.policy_opt.load_state("adam_policy/", extra, t_p)
    state.rng.bit_generator.state = _unjson(meta["rng_state"])
    state.step = params.step
    return state


@dataclass
class TrainResult:
    state: TrainState
    metrics: list = field(default_factory=list)  # rows keyed by METRIC_COLUMNS
    checkpoint: Path | None = None


def train(
    cfg: ExperimentConfig,
    resume=None,
    out_dir=None,
    write: bool = True,
    gw: Gridworld | None = None,
    dataset: Dataset | None = None,
) -> TrainResult:
    """Run the alternating critic/policy loop for cfg.train.steps total steps."""
    gw = gw or cfg.environment.build()
    ds = dataset if dataset is not None else load_dataset(cfg, gw)
    state = load_state(resume, cfg, gw) if resume else init_state(cfg, gw)
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    tcfg = cfg.train
    rows = []
    if write:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        fresh = not resume or not metrics_path.exists()
        fh = open(metrics_path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        if fresh:
            writer.writeheader()
    try:
        while state.step < tcfg.steps:
            batch = sample_batch(ds, cfg.tmd.batch_size, cfg.tmd.gamma, state.rng, cfg.tmd.goal_offset_start)
            try:
                row = _critic_step(state, cfg, batch)
                row["policy"] = _policy_step(state, cfg, batch) if tcfg.train_policy else math.nan
            except FloatingPointError as exc:
                raise FloatingPointError(f"non-finite loss at step {state.step + 1}: {exc}") from exc
            state.step += 1
            if state.step % tcfg.log_every == 0 or state.step == tcfg.steps:
                row = {"step": state.step, **row}
                rows.append(row)
                if write:
                    writer.writerow({k: repr(float(row[k])) if k != "step" else row[k] for k in METRIC_COLUMNS})
                    fh.flush()
            if write and tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
                save_state(out / f"ckpt_{state.step:07d}.npz", state, cfg)
    finally:
        if write:
            fh.close()
    ckpt = None
    if write:
        ckpt = out / "checkpoint.npz"
        save_state(ckpt, state, cfg)
    return TrainResult(state, rows, ckpt)


def action_table_for(cfg: ExperimentConfig, state: TrainState) -> np.ndarray:
    from .policy import action_table

    if cfg.eval.extraction == "policy" and cfg.train.method == "tmd":
        return action_table(state.pi, state.params.n_states)
    return critic_action_table(state.params)


def evaluate_state(cfg: ExperimentConfig, state: TrainState, gw: Gridworld | None = None) -> EvalReport:
    gw = gw or cfg.environment.build()
    return evaluate(gw.mdp, action_table_for(cfg, state), cfg.eval.task_list(gw), seed=cfg.eval.seed)


def read_metrics(path) -> list:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# ablations


def variant_config(cfg: ExperimentConfig, variant: str, seed: int) -> ExperimentConfig:
    switches = {
        "full": {},
        "no-stop-gradient": {"stop_grad": False},
        "no-nce": {"use_nce": False},
        "no-i": {"use_i": False},
        "no-t": {"use_t": False},
    }[variant]
    return replace(cfg, tmd=replace(cfg.tmd, **switches), train=replace(cfg.train, seed=seed))


@dataclass
class AblationRow:
    variant: str
    mean: float
    stderr: float
    rates: list

    def to_csv(self) -> dict:
        return {
            "variant": self.variant,
            "mean": repr(self.mean),
            "stderr": repr(self.stderr),
            "n_seeds": len(self.rates),
            "rates": " ".join(repr(r) for r in self.rates),
        }


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def run_seeds(cfg: ExperimentConfig, seeds, progress=None) -> list:
    """Success rate of one config over several training seeds (dataset shared)."""
    gw = cfg.environment.build()
    ds = load_dataset(cfg, gw)
    rates = []
    for seed in seeds:
        c = replace(cfg, train=replace(cfg.train, seed=seed))
        res = train(c, write=False, gw=gw, dataset=ds)
        rate = evaluate_state(c, res.state, gw).rate
        rates.append(rate)
        if progress:
            progress(seed, rate)
    return rates


def ablate(cfg: ExperimentConfig, progress=None) -> list:
    rows = []
    for variant in cfg.ablate.variants:
        rates = []
        for seed in cfg.ablate.seeds:
            rates += run_seeds(variant_config(cfg, variant, seed), [seed])
            if progress:
                progress(variant, seed, rates[-1])
        mean, se = mean_stderr(rates)
        rows.append(AblationRow(variant, mean, se, rates))
    return rows


def write_ablation(rows, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ablation.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "mean", "stderr", "n_seeds", "rates"])
        writer.writeheader()
        for r in rows:
            writer.writerow(r.to_csv())
    (out / "ablation.json").write_text(
        json.dumps([{"variant": r.variant, "mean": r.mean, "stderr": r.stderr, "rates": r.rates} for r in rows], indent=2)
    )
    return path
