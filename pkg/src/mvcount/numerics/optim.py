"""First-order optimizers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from mvcount.errors import NonFiniteError
from mvcount.numerics.nn import Parameter


@dataclass
class OptimizerConfig:
    mode: str = "sgd"  # "sgd" | "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: Optional[float] = None  # global-norm clip; None disables


class Optimizer:
    """Plain gradient descent or Adam over a fixed parameter list.

    :meth:`step` refuses to touch any parameter if a gradient is non-finite, and
    zeroes all gradients after a successful update.
    """

    def __init__(self, params: Sequence[Parameter], learning_rate: float,
                 config: Optional[OptimizerConfig] = None):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.config = config or OptimizerConfig()
        if self.config.mode not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer mode {self.config.mode!r}")
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in parameter {p.name!r}")
        cfg = self.config
        scale = 1.0
        if cfg.grad_clip is not None:
            total = np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params))
            if total > cfg.grad_clip:
                scale = cfg.grad_clip / total
        self.t += 1
        lr = self.learning_rate
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad * scale
            if cfg.mode == "sgd":
                p.data -= lr * g
                continue
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            mhat = m / (1.0 - cfg.beta1**self.t)
            vhat = v / (1.0 - cfg.beta2**self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + cfg.eps)).astype(p.dtype, copy=False)
        self.zero_grad()

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self._m], "v": [v.copy() for v in self._v]}


def optimizer_step(params: Sequence[Parameter], learning_rate: float,
                   config: Optional[OptimizerConfig] = None) -> None:
    """One stateless plain-descent update (Adam needs an :class:`Optimizer` to keep moments)."""
    config = config or OptimizerConfig()
    if config.mode != "sgd":
        raise ValueError("optimizer_step is stateless; use Optimizer for adaptive-moment updates")
    Optimizer(params, learning_rate, config).step()
