"""Adam over dicts of numpy arrays."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params: dict, lr: float = 3e-4, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        """In-place update of `params`."""
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self, prefix: str) -> dict:
        out = {f"{prefix}m/{k}": v for k, v in self.m.items()}
        out.update({f"{prefix}v/{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, prefix: str, arrays: dict, t: int) -> None:
        self.t = t
        for k in self.m:
            self.m[k] = arrays[f"{prefix}m/{k}"].copy()
            self.v[k] = arrays[f"{prefix}v/{k}"].copy()
