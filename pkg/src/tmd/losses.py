"""Critic objective: backward NCE plus action- and backup-invariance penalties."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor
from .envs import Batch
from .mrn import EncoderParams, mrn_pairwise, mrn_rowwise, phi, psi

DIVERGENCES = ("dt", "l2", "bce")


@dataclass
class TmdConfig:
    zeta: float = 0.1
    gamma: float = 0.9
    clip_t: float = 5.0
    w_diag: float = 0.5
    lr: float = 3e-4
    batch_size: int = 64
    lam: float = 0.5
    alpha: float = 0.1
    reduction: str = "sum"  # "sum" as in the written objectives, or "mean" per term count
    divergence: str = "dt"
    # ablation switches
    use_nce: bool = True
    use_i: bool = True
    use_t: bool = True
    stop_grad: bool = True  # freeze psi inside the backup loss
    live_source_psi: bool = False  # psi(g_j) in the backup source term carries gradient
    goal_offset_start: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.zeta < 0:
            raise ValueError(f"zeta must be nonnegative, got {self.zeta}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.clip_t <= 0:
            raise ValueError(f"clip_t must be positive, got {self.clip_t}")
        if not 0 <= self.w_diag <= 1:
            raise ValueError(f"w_diag must be in [0, 1], got {self.w_diag}")
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr and batch_size must be positive")
        if not 0 <= self.lam <= 1 or self.alpha < 0:
            raise ValueError("lam must be in [0, 1] and alpha nonnegative")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"unknown divergence {self.divergence!r}")
        if self.goal_offset_start not in (0, 1):
            raise ValueError("goal_offset_start must be 0 or 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "TmdConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TmdConfig keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def _reduce(t: Tensor, reduction: str) -> Tensor:
    return t.sum() if reduction == "sum" else t.mean()


# ---------------------------------------------------------------------------
# divergences


def bregman_dt(d, d_target):
    """exp(d - d') - d; minimized in expectation at d = -log E[exp(-d')]."""
    if isinstance(d, Tensor):
        return (d - d_target).exp() - d
    return np.exp(np.asarray(d) - np.asarray(d_target)) - np.asarray(d)


def divergence(name: str, d: Tensor, d_target) -> Tensor:
    if name == "dt":
        return bregman_dt(d, d_target)
    q = np.exp(-np.asarray(d_target.data if isinstance(d_target, Tensor) else d_target))
    if name == "l2":
        diff = (-d).exp() - q
        return diff * diff
    # binary cross-entropy of exp(-d) against exp(-d')
    p_miss = 1.0 - (-d).exp()
    floor = Tensor(np.where(p_miss.data > 1e-12, 0.0, 1e-12))
    return q * d - (1.0 - q) * (p_miss + floor).log()


# ---------------------------------------------------------------------------
# embeddings shared by the loss terms


class Embeddings:
    """Lazily computed encodings of one batch under live weights `net`."""

    def __init__(self, net: dict, params: EncoderParams, batch: Batch):
        self.net, self.params, self.batch = net, params, batch
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def phi_sa(self) -> Tensor:
        b = self.batch
        return self._get("phi_sa", lambda: phi(self.net, self.params, b.s, b.a))

    @property
    def psi_g(self) -> Tensor:
        return self._get("psi_g", lambda: psi(self.net, self.params, self.batch.g))

    @property
    def psi_s(self) -> Tensor:
        return self._get("psi_s", lambda: psi(self.net, self.params, self.batch.s))

    @property
    def phi_all(self) -> Tensor:
        """phi(s_i, a) for every action, shape (N, A, D)."""

        def build():
            n, A = len(self.batch), self.params.n_actions
            s = np.repeat(self.batch.s, A)
            a = np.tile(np.arange(A), n)
            return phi(self.net, self.params, s, a).reshape(n, A, self.params.cfg.latent_dim)

        return self._get("phi_all", build)

    def target_psi(self, states, live: bool) -> Tensor:
        key = ("target", tuple(np.asarray(states).tolist()), live)
        if live:
            return self._get(key, lambda: psi(self.net, self.params, states))
        return self._get(key, lambda: psi(self.params.target_tensors(), self.params, states))


# ---------------------------------------------------------------------------
# loss components


def nce_from(emb: Embeddings, cfg: TmdConfig | None = None) -> Tensor:
    reduction = cfg.reduction if cfg else "sum"
    # dist[j, i] = d(phi(s_j, a_j), psi(g_i)); logits for goal i are -dist[:, i]
    dist = mrn_pairwise(emb.phi_sa, emb.psi_g, emb.params.cfg)
    n = dist.shape[0]
    idx = np.arange(n)
    per_goal = (-dist).logsumexp(axis=0) + dist[idx, idx]
    return _reduce(per_goal, reduction)


def i_from(emb: Embeddings, cfg: TmdConfig | None = None) -> Tensor:
    reduction = cfg.reduction if cfg else "sum"
    b, p = emb.batch, emb.params
    n, A = len(b), p.n_actions
    # e[i, a] = d(psi(s_i), phi(s_i, a)); the double sum pairs state i with action a_j
    z_s = emb.psi_s.reshape(n, 1, p.cfg.latent_dim)
    diff = z_s - emb.phi_all
    e = diff.relu().reshape(n, A, p.cfg.components, p.cfg.size).max(axis=-1).mean(axis=-1)
    counts = np.bincount(b.a, minlength=A).astype(np.float64)
    total = (e * counts.reshape(1, A)).sum()
    return total if reduction == "sum" else total * (1.0 / (n * n))


def t_weights(n: int, w_diag: float) -> np.ndarray:
    w = np.full((n, n), 1.0 - w_diag)
    np.fill_diagonal(w, 1.0)
    return w


def t_terms(emb: Embeddings, cfg: TmdConfig) -> tuple[Tensor, Tensor]:
    """Per-(i, j) clipped divergences and the raw targets."""
    b, p = emb.batch, emb.params
    live_target = not cfg.stop_grad
    psi_g_src = emb.psi_g if (cfg.live_source_psi or live_target) else emb.target_psi(b.g, live=False)
    src = mrn_pairwise(emb.phi_sa, psi_g_src, p.cfg)
    tgt_next = emb.target_psi(b.s_next, live=live_target)
    tgt_goal = emb.psi_g if live_target else emb.target_psi(b.g, live=False)
    target = mrn_pairwise(tgt_next, tgt_goal, p.cfg) - np.log(cfg.gamma)
    if cfg.stop_grad:
        target = target.detach()
    raw = divergence(cfg.divergence, src, target)
    return raw.clip_max(cfg.clip_t), target


def t_from(emb: Embeddings, cfg: TmdConfig) -> Tensor:
    terms, _ = t_terms(emb, cfg)
    n = terms.shape[0]
    weighted = terms * t_weights(n, cfg.w_diag)
    return _reduce(weighted, cfg.reduction)


def loss_nce(params: EncoderParams, batch: Batch, net: dict | None = None, cfg: TmdConfig | None = None) -> Tensor:
    return nce_from(Embeddings(net or params.tensors(), params, batch), cfg)


def loss_i(params: EncoderParams, batch: Batch, net: dict | None = None, cfg: TmdConfig | None = None) -> Tensor:
    return i_from(Embeddings(net or params.tensors(), params, batch), cfg)


def loss_t(params: EncoderParams, batch: Batch, cfg: TmdConfig, net: dict | None = None) -> Tensor:
    """Backup-invariance loss against the frozen snapshot params.target."""
    if not params.target:
        raise ValueError("loss_t needs a psi snapshot; call snapshot_target first")
    return t_from(Embeddings(net or params.tensors(), params, batch), cfg)


@dataclass
class LossBreakdown:
    total: Tensor
    nce: float
    l_i: float
    l_t: float

    def row(self) -> dict:
        return {"nce": self.nce, "l_i": self.l_i, "l_t": self.l_t, "total": self.total.item()}


def loss_tmd(params: EncoderParams, batch: Batch, cfg: TmdConfig, net: dict | None = None) -> LossBreakdown:
    """nce + zeta * (l_i + l_t), with ablation switches applied."""
    emb = Embeddings(net or params.tensors(), params, batch)
    zero = Tensor(0.0)
    nce = nce_from(emb, cfg) if cfg.use_nce else zero
    if cfg.zeta > 0:
        li = i_from(emb, cfg) if cfg.use_i else zero
        lt = t_from(emb, cfg) if cfg.use_t else zero
        total = nce + cfg.zeta * (li + lt)
    else:
        li = lt = zero
        total = nce
    return LossBreakdown(total, nce.item(), li.item(), lt.item())


def critic_logits(params: EncoderParams, batch: Batch) -> np.ndarray:
    """f(s_j, a_j, g_i) = -d((s_j, a_j), g_i) as a matrix indexed [i, j]."""
    emb = Embeddings(params.tensors(), params, batch)
    return -mrn_pairwise(emb.phi_sa, emb.psi_g, params.cfg).data.T


def rowwise_distance(params: EncoderParams, states, actions, goals) -> np.ndarray:
    net = params.tensors()
    return mrn_rowwise(phi(net, params, states, actions), psi(net, params, goals), params.cfg).data
