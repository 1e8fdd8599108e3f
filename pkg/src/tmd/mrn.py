"""MRN quasimetric head on top of state (psi) and state-action (phi) encoders."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff
from .autodiff import Tensor, as_tensor, concat
from .mdp import make_rng


@dataclass(frozen=True)
class MrnConfig:
    components: int = 8  # K
    size: int = 4  # M, coordinates per component
    hidden: tuple = (64, 64)
    layer_norm: bool = False

    def __post_init__(self):
        if self.components < 1 or self.size < 1:
            raise ValueError("components and size must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def latent_dim(self) -> int:
        return self.components * self.size


# ---------------------------------------------------------------------------
# distance head


def _first_max(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over the last axis and the lowest index attaining it."""
    idx = np.argmax(a, axis=-1)
    return np.take_along_axis(a, idx[..., None], axis=-1)[..., 0], idx


def mrn_pairwise(x: Tensor, y: Tensor, cfg: MrnConfig) -> Tensor:
    """d_mrn(x_i, y_j) for all i, j; x is (N, D), y is (M, D), result (N, M)."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape[-1] != cfg.latent_dim or y.shape[-1] != cfg.latent_dim:
        raise ValueError(f"expected latent dim {cfg.latent_dim}, got {x.shape[-1]} and {y.shape[-1]}")
    n, m = x.shape[0], y.shape[0]
    K, M = cfg.components, cfg.size
    # max_m relu(diff) == relu(max_m diff), with the same first-maximizer subgradient
    diff = (x.data[:, None, :] - y.data[None, :, :]).reshape(n, m, K, M)
    top, idx = _first_max(diff)
    active = top > 0
    out = np.where(active, top, 0.0).mean(axis=-1)

    def back(g):
        coeff = g[:, :, None] * active / K
        full = (idx[..., None] == np.arange(M)) * coeff[..., None]
        full = full.reshape(n, m, K * M)
        return full.sum(axis=1), -full.sum(axis=0)

    return Tensor(out, _parents=(x, y), _backward=back)


def mrn_rowwise(x: Tensor, y: Tensor, cfg: MrnConfig) -> Tensor:
    """d_mrn(x_i, y_i); both (N, D), result (N,)."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape or x.shape[-1] != cfg.latent_dim:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape} (latent dim {cfg.latent_dim})")
    n = x.shape[0]
    comp = (x - y).relu().reshape(n, cfg.components, cfg.size).max(axis=-1)
    return comp.mean(axis=-1)


def mrn_distance(x, y, cfg: MrnConfig) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, -1)
    return float(mrn_rowwise(Tensor(x), Tensor(y), cfg).data[0])


# ---------------------------------------------------------------------------
# encoders


def _init_mlp(rng, prefix: str, sizes: list, out: dict) -> None:
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        out[f"{prefix}.W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        out[f"{prefix}.b{i}"] = rng.uniform(-bound, bound, size=(fan_out,))


def _layer_norm(h: Tensor, eps: float = 1e-6) -> Tensor:
    mu = h.mean(axis=-1, keepdims=True)
    c = h - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    return c / (var + eps).sqrt()


def mlp(net: dict, prefix: str, x: Tensor, layer_norm: bool = False) -> Tensor:
    n_layers = sum(1 for k in net if k.startswith(prefix + ".W"))
    h = as_tensor(x)
    for i in range(n_layers):
        h = h @ net[f"{prefix}.W{i}"] + net[f"{prefix}.b{i}"]
        if i < n_layers - 1:
            if layer_norm:
                h = _layer_norm(h)
            h = h.relu()
    return h


@dataclass
class EncoderParams:
    """Trainable phi/psi weights plus the frozen psi snapshot (psi-bar)."""

    cfg: MrnConfig
    features: np.ndarray  # per-state input features (S, F)
    n_actions: int
    arrays: dict  # "phi.W0", ..., "psi.W0", ...
    target: dict = field(default_factory=dict)  # frozen copies of the psi arrays
    seed: int = 0
    step: int = 0

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    def tensors(self, requires_grad: bool = False) -> dict:
        return {k: Tensor(v, requires_grad=requires_grad) for k, v in self.arrays.items()}

    def target_tensors(self) -> dict:
        return {k: Tensor(v) for k, v in self.target.items()}

    def copy(self) -> "EncoderParams":
        return replace(
            self,
            arrays={k: v.copy() for k, v in self.arrays.items()},
            target={k: v.copy() for k, v in self.target.items()},
        )


def init_encoders(cfg: MrnConfig, features: np.ndarray, n_actions: int, seed: int = 0) -> EncoderParams:
    rng = make_rng(seed)
    features = np.asarray(features, dtype=np.float64)
    f = features.shape[1]
    arrays = {}
    _init_mlp(rng, "psi", [f, *cfg.hidden, cfg.latent_dim], arrays)
    _init_mlp(rng, "phi", [f + n_actions, *cfg.hidden, cfg.latent_dim], arrays)
    params = EncoderParams(cfg, features, n_actions, arrays, seed=seed)
    return snapshot_target(params)


def one_hot_features(n_states: int) -> np.ndarray:
    return np.eye(n_states)


def psi(net: dict, params: EncoderParams, states) -> Tensor:
    x = params.features[np.asarray(states)]
    return mlp(net, "psi", Tensor(x), params.cfg.layer_norm)


def phi(net: dict, params: EncoderParams, states, actions) -> Tensor:
    x = params.features[np.asarray(states)]
    a = np.eye(params.n_actions)[np.asarray(actions)]
    return mlp(net, "phi", concat([Tensor(x), Tensor(a)], axis=-1), params.cfg.layer_norm)


def snapshot_target(params: EncoderParams) -> EncoderParams:
    """psi-bar <- psi; phi and psi are left as they are."""
    params.target = {k: v.copy() for k, v in params.arrays.items() if k.startswith("psi.")}
    return params


# ---------------------------------------------------------------------------
# evaluation helpers


def embed_all(params: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    """psi for every state (S, D) and phi for every state-action (S, A, D)."""
    net = params.tensors()
    S, A = params.n_states, params.n_actions
    z_s = psi(net, params, np.arange(S)).data
    s = np.repeat(np.arange(S), A)
    a = np.tile(np.arange(A), S)
    z_sa = phi(net, params, s, a).data.reshape(S, A, -1)
    return z_s, z_sa


def full_distance(params: EncoderParams, x, y) -> float:
    """d_theta between endpoints; a state is an int, a state-action a (s, a) pair."""
    net = params.tensors()

    def enc(e):
        if isinstance(e, (tuple, list)):
            s, a = e
            return phi(net, params, [s], [a])
        return psi(net, params, [e])

    return float(mrn_rowwise(enc(x), enc(y), params.cfg).data[0])


def distance_table(params: EncoderParams):
    """Learned distance on the whole joint domain as a DistanceTable."""
    from .distance import DistanceTable

    z_s, z_sa = embed_all(params)
    S, A = params.n_states, params.n_actions
    z = np.concatenate([z_s, z_sa.reshape(S * A, -1)])
    v = mrn_pairwise(Tensor(z), Tensor(z), params.cfg).data
    return DistanceTable(v, S, A)


def grad(params: EncoderParams, loss_fn) -> tuple[float, dict]:
    """Loss value and gradient w.r.t. params.arrays; `loss_fn(net)` builds the loss."""
    return autodiff.grad(loss_fn, params.arrays)


# ---------------------------------------------------------------------------
# checkpoints: one .npz with all arrays plus a JSON sidecar


def save_checkpoint(path, params: EncoderParams, extra_arrays: dict | None = None, meta: dict | None = None) -> None:
    path = Path(path)
    blobs = {f"enc/{k}": v for k, v in params.arrays.items()}
    blobs.update({f"target/{k}": v for k, v in params.target.items()})
    blobs["features"] = params.features
    for k, v in (extra_arrays or {}).items():
        blobs[k] = v
    with open(path, "wb") as fh:
        np.savez(fh, **blobs)
    sidecar = {
        "config": asdict(params.cfg),
        "n_actions": params.n_actions,
        "seed": params.seed,
        "step": params.step,
        **(meta or {}),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[EncoderParams, dict, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    with np.load(path) as z:
        blobs = {k: z[k] for k in z.files}
    cfg = MrnConfig(**meta["config"])
    arrays = {k[4:]: v for k, v in blobs.items() if k.startswith("enc/")}
    target = {k[7:]: v for k, v in blobs.items() if k.startswith("target/")}
    extra = {k: v for k, v in blobs.items() if not k.startswith(("enc/", "target/")) and k != "features"}
    params = EncoderParams(cfg, blobs["features"], meta["n_actions"], arrays, target, meta["seed"], meta["step"])
    return params, extra, meta
