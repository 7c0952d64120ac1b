"""AdamW with decoupled weight decay, and the warmup/decay schedule."""

from __future__ import annotations

import numpy as np

from .errors import MetafnError, UsageError
from .nn import Parameter


class AdamW:
    """Adam with decoupled weight decay.

    Parameters are organized in groups so different groups can run at
    different (scheduled) learning rates.  Weight decay is skipped for
    parameters flagged ``weight_decay_exempt``.  One shared step counter
    drives bias correction for the whole instance.
    """

    def __init__(self, groups, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-5):
        if groups and isinstance(groups[0], Parameter):
            groups = [{"params": list(groups), "lr": lr}]
        self.groups = [{"params": list(g["params"]), "lr": float(g.get("lr", lr))}
                       for g in groups]
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._s: dict[str, np.ndarray] = {}
        seen: set[str] = set()
        for g in self.groups:
            for p in g["params"]:
                if p.name in seen:
                    raise UsageError(f"parameter {p.name!r} appears in two groups")
                seen.add(p.name)
                self._m[p.name] = np.zeros_like(p.data)
                self._s[p.name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.zero_grad()

    def step(self) -> None:
        """Apply one update; parameters without a gradient are treated as g=0."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for group in self.groups:
            lr = group["lr"]
            for p in group["params"]:
                g = p.grad if p.grad is not None else np.zeros_like(p.data)
                if not np.all(np.isfinite(g)):
                    raise MetafnError(f"non-finite gradient for parameter {p.name!r}")
                data = p.data
                if self.weight_decay and not p.weight_decay_exempt:
                    data = data * (1.0 - lr * self.weight_decay)
                m = self._m[p.name] = self.beta1 * self._m[p.name] + (1.0 - self.beta1) * g
                s = self._s[p.name] = self.beta2 * self._s[p.name] + (1.0 - self.beta2) * (g * g)
                step = lr * (m / c1) / (np.sqrt(s / c2) + self.eps)
                p.data = data - step


def lr_at(step: int, total_steps: int, base_lr: float,
          warmup_frac: float = 0.2) -> float:
    """Linear warmup to ``base_lr`` over the first ``warmup_frac`` of steps,
    then linear decay to zero at ``total_steps``."""
    if total_steps <= 0:
        raise UsageError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise UsageError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_frac * total_steps
    if step <= warm:
        return base_lr * (step / warm) if warm > 0 else base_lr
    return base_lr * (total_steps - step) / (total_steps - warm)
