from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import NonFiniteError, Params


@dataclass
class OptimizerState:
    """SGD with Nesterov momentum, per-update decay and plateau reduction.

    Effective rate after ``updates`` steps is
    ``lr / (1 + decay * updates) / plateau_factor ** reductions``.
    """
    lr: float = 0.005
    decay: float = 1e-5
    momentum: float = 0.9
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    min_delta: float = 1e-4
    velocities: list | None = None
    updates: int = 0
    reductions: int = 0
    best_val: float = float("inf")
    wait: int = 0
    history: list = field(default_factory=list)

    def effective_lr(self, updates: int | None = None) -> float:
        t = self.updates if updates is None else updates
        return self.lr / (1.0 + self.decay * t) / self.plateau_factor ** self.reductions

    def observe_validation(self, val_loss: float) -> bool:
        """Record an epoch's validation loss; True when the rate was just reduced."""
        if val_loss < self.best_val - self.min_delta:
            self.best_val = val_loss
            self.wait = 0
            return False
        self.wait += 1
        if self.wait >= self.plateau_patience:
            self.reductions += 1
            self.wait = 0
            self.history.append(self.updates)
            return True
        return False


def sgd_update(params: Params, grads: Params, state: OptimizerState):
    """One Nesterov step in place (look-ahead form):
    v <- mu*v - lr*g ; theta <- theta + mu*v - lr*g.
    """
    for g in grads:
        for v in g.values():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError("non-finite gradient")
    if state.velocities is None:
        state.velocities = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
    lr = state.effective_lr()
    mu = state.momentum
    for p, g, vel in zip(params, grads, state.velocities):
        for k in p:
            if p[k].shape != g[k].shape:
                raise ValueError(f"gradient shape {g[k].shape} does not match {p[k].shape}")
            step = lr * g[k]
            vel[k] *= mu
            vel[k] -= step
            p[k] += mu * vel[k] - step
    state.updates += 1
    return params, state
