"""Temporal metric distillation: quasimetric temporal distances from offline goal-conditioned data.

The package has three layers. Exact tabular machinery (``mdp``, ``distance``,
``oracle``) defines the operators and the optimal successor distance that
learning is checked against. The learning side (``autodiff``, ``mrn``, ``losses``,
``policy``, ``optim``, ``baselines``) trains MRN encoders from trajectories. The
experiment side (``envs``, ``config``, ``train``, ``verify``, ``plotting``, ``cli``)
builds gridworlds, runs configs and reports.
"""

from .distance import DistanceTable, is_quasimetric, op_I, op_P, op_T, project_quasimetric, tmd_fixed_point
from .mdp import MDPError, TabularMDP, TabularPolicy, make_rng, random_mdp
from .oracle import d_sd_pi, d_sd_star, q_pi, q_star

__all__ = [
    "DistanceTable",
    "MDPError",
    "TabularMDP",
    "TabularPolicy",
    "d_sd_pi",
    "d_sd_star",
    "is_quasimetric",
    "make_rng",
    "op_I",
    "op_P",
    "op_T",
    "project_quasimetric",
    "q_pi",
    "q_star",
    "random_mdp",
    "tmd_fixed_point",
]

__version__ = "0.1.0"
