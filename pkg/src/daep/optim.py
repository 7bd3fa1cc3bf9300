"""Adam with bias correction; the only optimizer the trainer uses."""

from __future__ import annotations

import numpy as np

from daep.errors import ValidationError


class Adam:
    def __init__(self, params, lr: float = 2.5e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        if lr <= 0:
            raise ValidationError("learning rate must be positive")
        # Deduplicate so shared weights are stepped once.
        seen: dict[int, object] = {}
        for p in params:
            seen.setdefault(id(p), p)
        self.params = list(seen.values())
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.asarray([self.t], dtype=np.int64)}
        for i in range(len(self.params)):
            out[f"m{i}"] = self.m[i]
            out[f"v{i}"] = self.v[i]
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]):
        self.t = int(state["t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.asarray(state[f"m{i}"], dtype=np.float64)
            self.v[i] = np.asarray(state[f"v{i}"], dtype=np.float64)
