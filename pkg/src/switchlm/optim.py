"""Decoupled-weight-decay adaptive-moment optimizer (AdamW)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Hyperparameters for any gradient-descent run in this package.

    Defaults are the expert-token trainer's; backbone training overrides
    them (see :data:`switchlm.backbone.BACKBONE_TRAIN_DEFAULTS`).
    """

    learning_rate: float = 5e-4
    weight_decay: float = 1.0
    epochs: int = 5
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class AdamW:
    """Per-tensor AdamW state; update order is fixed by call order."""

    lr: float
    weight_decay: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict)
    _v: dict[str, np.ndarray] = field(default_factory=dict)

    def step_begin(self) -> None:
        self.t += 1

    def update(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        """Apply one AdamW update in place; decay is decoupled toward zero."""
        g = grad.astype(param.dtype, copy=False)
        if name not in self._m:
            self._m[name] = np.zeros_like(param)
            self._v[name] = np.zeros_like(param)
        m, v = self._m[name], self._v[name]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        mhat = m / (1.0 - self.beta1**self.t)
        vhat = v / (1.0 - self.beta2**self.t)
        param -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * param)
