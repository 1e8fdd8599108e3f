"""Dense distance tables over X = S u (S x A) and the operators acting on them.

Index layout: state ids 0..S-1, then state-action (s, a) at S + s*A + a.
Unreachable pairs are stored as +inf and stay absorbing under +, min and exp(-.).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import TabularMDP

INF = np.inf


@dataclass(eq=False)
class DistanceTable:
    values: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.n_states * (1 + self.n_actions)
        if self.values.shape != (n, n):
            raise ValueError(
                f"table shape {self.values.shape} does not match |X|={n} "
                f"(n_states={self.n_states}, n_actions={self.n_actions})"
            )

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def sa(self, s, a):
        """Index of state-action (s, a)."""
        return self.n_states + np.asarray(s) * self.n_actions + np.asarray(a)

    def copy(self) -> "DistanceTable":
        return DistanceTable(self.values.copy(), self.n_states, self.n_actions)

    def with_values(self, values) -> "DistanceTable":
        return DistanceTable(values, self.n_states, self.n_actions)

    def sa_to_state(self) -> np.ndarray:
        """View d((s,a), g) as an array [s, a, g]."""
        S, A = self.n_states, self.n_actions
        return self.values[S:, :S].reshape(S, A, S)

    def in_domain(self, tol: float = 0.0) -> bool:
        v = self.values
        return bool(np.all(np.abs(np.diag(v)) <= tol) and np.all(v >= -tol))

    # -- serialization: JSON header + CSV grid ("inf" for unreachable)

    def header(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "ordering": "states-then-state-actions",
        }

    def save(self, path) -> None:
        path = Path(path)
        path.with_suffix(".json").write_text(json.dumps(self.header()))
        np.savetxt(path.with_suffix(".csv"), self.values, delimiter=",", fmt="%.17g")

    @classmethod
    def load(cls, path) -> "DistanceTable":
        path = Path(path)
        head = json.loads(path.with_suffix(".json").read_text())
        if head.get("ordering") != "states-then-state-actions":
            raise ValueError(f"unsupported ordering {head.get('ordering')!r}")
        values = np.loadtxt(path.with_suffix(".csv"), delimiter=",", ndmin=2)
        return cls(values, head["n_states"], head["n_actions"])


def table_size(n_states: int, n_actions: int) -> int:
    return n_states * (1 + n_actions)


def sup_change(a: np.ndarray, b: np.ndarray) -> float:
    """Sup-norm difference treating matching infinities as equal."""
    both_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    if np.any(np.isinf(a) != np.isinf(b)):
        return INF
    with np.errstate(invalid="ignore"):
        diff = np.where(both_inf, 0.0, np.abs(a - b))
    return float(diff.max()) if diff.size else 0.0


def op_I(d: DistanceTable) -> DistanceTable:
    """Action relaxation: d(s, (s, a)) <- 0, everything else untouched."""
    out = d.values.copy()
    S, A = d.n_states, d.n_actions
    s = np.repeat(np.arange(S), A)
    a = np.tile(np.arange(A), S)
    out[s, d.sa(s, a)] = 0.0
    return d.with_values(out)


def _neg_log_expect_exp_neg(p: np.ndarray, d_rows: np.ndarray) -> np.ndarray:
    """-log sum_s' p[k, s'] exp(-d_rows[s', y]) for every row k and column y.

    Computed as a shifted log-sum-exp so large finite distances do not
    underflow; rows with zero mass come out as +inf.
    """
    with np.errstate(divide="ignore"):
        logp = np.log(p)  # (K, S)
    # terms[k, s', y] = log p[k, s'] - d[s', y]
    terms = logp[:, :, None] - d_rows[None, :, :]
    m = terms.max(axis=1)  # (K, Y)
    finite = np.isfinite(m)
    m_safe = np.where(finite, m, 0.0)
    with np.errstate(invalid="ignore"):
        acc = np.exp(terms - m_safe[:, None, :]).sum(axis=1)
    out = np.full(m.shape, INF)
    out[finite] = -(m_safe[finite] + np.log(acc[finite]))
    return out


def op_T(mdp: TabularMDP, d: DistanceTable, keep_diagonal: bool = True) -> DistanceTable:
    """Exponentiated backup on state-action rows; state rows unchanged.

    d'((s,a), y) = -log E_{s'~p(.|s,a)} exp(-d(s', y)) - log gamma.
    With keep_diagonal the entries d((s,a),(s,a)) stay 0 so the result
    remains a distance (zero self-distance).
    """
    S, A = d.n_states, d.n_actions
    if (mdp.n_states, mdp.n_actions) != (S, A):
        raise ValueError("MDP and table dimensions differ")
    p = mdp.transition.reshape(S * A, S)
    out = d.values.copy()
    out[S:, :] = _neg_log_expect_exp_neg(p, d.values[:S, :]) - np.log(mdp.gamma)
    if keep_diagonal:
        idx = np.arange(S, S + S * A)
        out[idx, idx] = 0.0
    return d.with_values(out)


def _waypoints(d: DistanceTable, waypoints: str) -> np.ndarray:
    if waypoints == "all":
        return np.arange(d.size)
    if waypoints == "states":
        return np.arange(d.n_states)
    raise ValueError(f"waypoints must be 'all' or 'states', got {waypoints!r}")


def op_P(d: DistanceTable, waypoints: str = "all") -> DistanceTable:
    """One step of path relaxation: d'(x, z) = min_y d(x, y) + d(y, z)."""
    v = d.values
    out = np.full_like(v, INF)
    for y in _waypoints(d, waypoints):
        np.minimum(out, v[:, y, None] + v[None, y, :], out=out)
    return d.with_values(out)


def project_quasimetric(d: DistanceTable, waypoints: str = "all") -> DistanceTable:
    """Min-plus transitive closure (Floyd-Warshall); the limit of repeated op_P."""
    v = d.values.copy()
    for k in _waypoints(d, waypoints):
        np.minimum(v, v[:, k, None] + v[None, k, :], out=v)
    return d.with_values(v)


@dataclass
class QuasimetricCheck:
    ok: bool
    violation: tuple | None = None  # (x, y, z) with d(x,z) > d(x,y) + d(y,z) + tol
    excess: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def is_quasimetric(d: DistanceTable | np.ndarray, tol: float = 1e-9) -> QuasimetricCheck:
    v = d.values if isinstance(d, DistanceTable) else np.asarray(d, dtype=np.float64)
    diag = np.diag(v)
    if np.any(np.abs(diag) > tol):
        x = int(np.argmax(np.abs(diag)))
        return QuasimetricCheck(False, (x, x, x), float(abs(diag[x])))
    if np.any(v < -tol):
        x, z = map(int, np.argwhere(v < -tol)[0])
        return QuasimetricCheck(False, (x, x, z), float(-v[x, z]))
    for y in range(v.shape[0]):
        via = v[:, y, None] + v[None, y, :]
        with np.errstate(invalid="ignore"):
            gap = v - via
        gap = np.where(np.isnan(gap), -INF, gap)
        if np.any(gap > tol):
            x, z = np.unravel_index(int(np.argmax(gap)), gap.shape)
            return QuasimetricCheck(False, (int(x), y, int(z)), float(gap[x, z]))
    return QuasimetricCheck(True)


@dataclass
class FixedPointResult:
    table: DistanceTable
    iterations: int
    residual: float
    converged: bool
    history: list

    @property
    def diagnostic(self) -> str:
        state = "converged" if self.converged else "did not converge"
        return f"{state} after {self.iterations} iterations, residual {self.residual:.3e}"


def tmd_step(mdp: TabularMDP, d: DistanceTable, waypoints: str = "all") -> DistanceTable:
    """One composed application: project(T(I(d)))."""
    return project_quasimetric(op_T(mdp, op_I(d)), waypoints)


def tmd_fixed_point(
    mdp: TabularMDP,
    d0: DistanceTable,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    waypoints: str = "all",
) -> FixedPointResult:
    d = d0
    history = []
    residual = INF
    for it in range(1, max_iter + 1):
        nxt = tmd_step(mdp, d, waypoints)
        residual = sup_change(nxt.values, d.values)
        history.append(residual)
        d = nxt
        if residual < tol:
            return FixedPointResult(d, it, residual, True, history)
    result = FixedPointResult(d, max_iter, residual, False, history)
    warnings.warn(f"tmd_fixed_point {result.diagnostic}", RuntimeWarning, stacklevel=2)
    return result
