"""Deterministic quasimetric regression: a lightweight quasimetric-RL style baseline.

States are embedded with psi; a transition (s, a, s') is treated as if it were
deterministic: the latent step cost d(psi(s), psi(s')) is capped at one unit and
phi(s, a) is pulled onto psi(s') in both directions, while distances between
random state/goal pairs are pushed up to a saturation level. Under stochastic
dynamics this is optimistic, since phi(s, a) ends up close to every successor seen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .envs import Batch
from .losses import Embeddings
from .mrn import EncoderParams, mrn_pairwise, mrn_rowwise, psi


@dataclass
class QrlConfig:
    step_cost: float = 1.0
    saturation: float = 15.0
    penalty: float = 100.0
    model_weight: float = 1.0


def loss_qrl(params: EncoderParams, batch: Batch, cfg: QrlConfig, net: dict | None = None) -> Tensor:
    net = net or params.tensors()
    emb = Embeddings(net, params, batch)
    z_next = psi(net, params, batch.s_next)
    spread = mrn_pairwise(emb.psi_s, emb.psi_g, params.cfg)
    push = (cfg.saturation - spread).softplus().mean()
    local = mrn_rowwise(emb.psi_s, z_next, params.cfg) - cfg.step_cost
    constraint = local.relu()
    constraint = (constraint * constraint).mean()
    model = (mrn_rowwise(emb.phi_sa, z_next, params.cfg) + mrn_rowwise(z_next, emb.phi_sa, params.cfg)).mean()
    return push + cfg.penalty * constraint + cfg.model_weight * model
