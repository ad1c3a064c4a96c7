"""First-order optimizers for the parameter dicts used across the package."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Adaptive-moment gradient descent over a name -> Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Optimizer state as flat arrays, suitable for checkpoint extras."""
        out: dict[str, np.ndarray] = {"opt.step": np.array([float(self.step_count)])}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if "opt.step" in arrays:
            self.step_count = int(arrays["opt.step"][0])
        for name in self.params:
            if f"opt.m.{name}" in arrays:
                self.m[name] = np.ascontiguousarray(arrays[f"opt.m.{name}"])
            if f"opt.v.{name}" in arrays:
                self.v[name] = np.ascontiguousarray(arrays[f"opt.v.{name}"])
