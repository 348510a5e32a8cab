"""Uncertainty-scaled SGD and a plateau learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .model import BayesianLinear
from .variational import sigma_of_rho

_NAMES = ("mu_w", "rho_w", "mu_b", "rho_b")


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float = 0.06
    decay_factor: float = 3.0
    patience: int = 5
    ucb_enabled: bool = True
    # optional ceiling on sigma * eta for the mean updates; off by default
    max_mu_lr: Optional[float] = None
    improvement_eps: float = 1e-12

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.decay_factor > 1:
            raise ValueError("decay_factor must exceed 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def ucb_step(
    layers: Sequence[BayesianLinear],
    grads: Sequence[tuple],
    eta: float,
    ucb_enabled: bool = True,
    max_mu_lr: Optional[float] = None,
) -> None:
    """In-place update of every layer.

    With ``ucb_enabled`` the mean of each weight moves with learning rate
    ``sigma * eta`` (sigma read before this step's rho update) and rho moves
    with ``eta``. Without it both move with ``eta``.
    """
    if len(layers) != len(grads):
        raise ValueError("gradients are not aligned with layers")
    for i, (layer, g) in enumerate(zip(layers, grads)):
        for name, a in zip(_NAMES, g):
            if not np.all(np.isfinite(a)):
                idx = tuple(int(v) for v in np.argwhere(~np.isfinite(a))[0])
                raise FloatingPointError(f"non-finite gradient for layer {i} {name}{idx}")
        g_mw, g_rw, g_mb, g_rb = g
        for mu, rho, g_mu, g_rho in ((layer.mu_w, layer.rho_w, g_mw, g_rw), (layer.mu_b, layer.rho_b, g_mb, g_rb)):
            if ucb_enabled:
                lr_mu = sigma_of_rho(rho) * eta
                if max_mu_lr is not None:
                    lr_mu = np.minimum(lr_mu, max_mu_lr)
            else:
                lr_mu = eta
            mu -= lr_mu * g_mu
            rho -= eta * g_rho


@dataclass(frozen=True)
class SchedulerState:
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    current_eta: float = 0.06

    @classmethod
    def start(cls, cfg: OptimizerConfig) -> "SchedulerState":
        return cls(current_eta=cfg.eta)


def scheduler_update(state: SchedulerState, epoch_val_loss: float, cfg: OptimizerConfig) -> SchedulerState:
    """Divide eta by ``decay_factor`` after ``patience`` epochs without improvement."""
    if epoch_val_loss < state.best_val_loss - cfg.improvement_eps:
        return replace(state, best_val_loss=float(epoch_val_loss), epochs_since_improvement=0)
    waited = state.epochs_since_improvement + 1
    if waited >= cfg.patience:
        return replace(state, epochs_since_improvement=0, current_eta=state.current_eta / cfg.decay_factor)
    return replace(state, epochs_since_improvement=waited)
