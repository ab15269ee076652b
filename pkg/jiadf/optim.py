"""AdamW with decoupled weight decay and a reduce-on-plateau learning-rate schedule."""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .autodiff import ParamStore
from .errors import ConfigError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)


@dataclass
class AdamWState:
    """
    Moments and hyperparameters of one AdamW run.

    m and v are keyed by parameter name and start at zero; t counts steps.
    """
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"Invalid learning rate: {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError(f"Invalid betas: ({self.beta1}, {self.beta2})")
        if self.eps < 0 or self.weight_decay < 0:
            raise ConfigError(f"Invalid eps/weight_decay: {self.eps}, {self.weight_decay}")

    @classmethod
    def for_store(cls, store: ParamStore, **hyper) -> "AdamWState":
        state = cls(**hyper)
        for name, value in store.items():
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        return state

    def hyperparameters(self) -> Dict[str, Any]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "t": self.t,
        }


def adamw_step(store: ParamStore, state: AdamWState, grads: Optional[Dict[str, np.ndarray]] = None) -> None:
    """
    One AdamW update of every parameter in place.

        m ← β1·m + (1−β1)·g,   v ← β2·v + (1−β2)·g²
        m̂ = m / (1−β1ᵗ),       v̂ = v / (1−β2ᵗ)
        θ ← θ·(1 − lr·wd) − lr·m̂ / (√v̂ + ε)

    Gradients default to the store's gradient buffers. A non-finite gradient
    aborts the step before any parameter changes.
    """
    grads = grads if grads is not None else store.grads()
    for name in store.names():
        g = grads[name]
        if g.shape != store.value(name).shape:
            raise DimensionError(f"Gradient for {name} has shape {g.shape}, expected {store.value(name).shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"Non-finite gradient for parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    decay = 1.0 - state.lr * state.weight_decay

    for name in store.names():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bias1
        v_hat = v / bias2
        store.set_value(name, store.value(name) * decay - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))


@dataclass
class PlateauState:
    """Reduce-on-plateau schedule for a metric that should increase"""
    lr: float = 1e-4
    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-6
    best: Optional[float] = None
    bad_epochs: int = 0
    mode: str = "max"

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ConfigError(f"plateau factor must lie in (0, 1), got {self.factor}")
        if self.patience < 0:
            raise ConfigError(f"plateau patience must be >= 0, got {self.patience}")
        if self.mode != "max":
            raise ConfigError(f"only mode 'max' is supported, got {self.mode}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lr": self.lr,
            "factor": self.factor,
            "patience": self.patience,
            "min_lr": self.min_lr,
            "best": self.best,
            "bad_epochs": self.bad_epochs,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PlateauState":
        return cls(**data)


def plateau_update(state: PlateauState, metric: float) -> float:
    """
    Record one epoch's metric and return the (possibly reduced) learning rate.

    A strict increase over the best value resets the bad-epoch counter. Once
    more than `patience` consecutive epochs fail to improve, lr drops to
    max(lr·factor, min_lr) and the counter resets.
    """
    metric = float(metric)
    if not np.isfinite(metric):
        raise NonFiniteError(f"plateau_update: metric is not finite ({metric})")

    if state.best is None or metric > state.best:
        state.best = metric
        state.bad_epochs = 0
        return state.lr

    state.bad_epochs += 1
    if state.bad_epochs > state.patience:
        new_lr = max(state.lr * state.factor, state.min_lr)
        if new_lr < state.lr:
            logger.info(f"Reducing learning rate from {state.lr:.3g} to {new_lr:.3g}")
        state.lr = new_lr
        state.bad_epochs = 0
    return state.lr
