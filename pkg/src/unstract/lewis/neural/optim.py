import math
from dataclasses import dataclass

import numpy as np

from unstract.lewis.neural.layers import Module


@dataclass
class TrainConfig:
    """Optimizer and loop settings for one model role."""

    steps: int = 2000
    batch_size: int = 32
    lr: float = 3e-4
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    log_every: int = 100


class Adam:
    """Adam with decoupled weight decay and a linear-warmup-then-constant
    learning rate. Updates parameters in place."""

    def __init__(self, module: Module, config: TrainConfig):
        self.module = module
        self.config = config
        self.step_count = 0
        self._m = {name: np.zeros_like(p) for name, p in module.named_parameters()}
        self._v = {name: np.zeros_like(p) for name, p in module.named_parameters()}

    def learning_rate(self, step: int) -> float:
        if self.config.warmup_steps <= 0:
            return self.config.lr
        return self.config.lr * min(1.0, step / self.config.warmup_steps)

    def clip_gradients(self) -> float:
        grads = [g for _, g in self.module.named_grads()]
        norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
        if self.config.clip_norm > 0 and norm > self.config.clip_norm:
            scale = self.config.clip_norm / (norm + 1e-6)
            for g in grads:
                g *= scale
        return norm

    def step(self) -> float:
        self.step_count += 1
        cfg = self.config
        lr = self.learning_rate(self.step_count)
        bias1 = 1.0 - cfg.beta1**self.step_count
        bias2 = 1.0 - cfg.beta2**self.step_count
        grads = dict(self.module.named_grads())
        for name, param in self.module.named_parameters():
            g = grads[name]
            m, v = self._m[name], self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
            if cfg.weight_decay:
                update = update + cfg.weight_decay * param
            param -= (lr * update).astype(param.dtype)
        return lr
