"""
Adam with L2 gradient augmentation, plateau learning-rate decay and early stopping.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import (ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, EARLY_STOP_PATIENCE, LR_FACTOR,
                    LR_PATIENCE, MIN_LEARNING_RATE)
from errors import ConfigError, ShapeError, TrainingError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    last_decay_epoch: Optional[int] = None

    def arrays(self):
        """Moment buffers keyed "m/<param>" and "v/<param>" for checkpointing."""
        out = {f"m/{name}": value for name, value in self.m.items()}
        out.update({f"v/{name}": value for name, value in self.v.items()})
        return out

    def scalars(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "epsilon": self.epsilon,
                "step": self.step, "last_decay_epoch": self.last_decay_epoch}

    @classmethod
    def restore(cls, scalars, arrays):
        state = cls(**scalars)
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            getattr(state, kind)[name] = np.array(value, dtype=np.float64)
        return state


def adam_step(state, params, grads=None, l2_set=(), l2=0.0, epoch=None, batch=None):
    """Update params (name -> Tensor) in place from grads (defaults to each tensor's .grad)."""
    grads = grads if grads is not None else {name: p.grad for name, p in params.items()}
    bad = [name for name, g in grads.items() if g is not None and not np.all(np.isfinite(g))]
    if bad:
        raise TrainingError("Non-finite gradient", epoch=epoch, batch=batch, parameters=bad)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"adam_step: gradient {grad.shape} does not match parameter {name} {param.shape}")
        if name in l2_set:
            grad = grad + 2.0 * l2 * param.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return state


def _epochs_since_best(history):
    return len(history) - 1 - int(np.argmin(history))


def reduce_lr_on_plateau(state, monitor_history, factor=LR_FACTOR, min_lr=MIN_LEARNING_RATE,
                         patience=LR_PATIENCE):
    """Decay lr once the monitored loss has not improved for `patience` epochs.

    After a decay the counter restarts, so the next decay needs another
    `patience` epochs without a new best.
    """
    if not 0.0 < factor < 1.0:
        raise ConfigError(f"LR factor must lie in (0, 1), got {factor}")
    if not monitor_history:
        return state
    epoch = len(monitor_history) - 1
    if _epochs_since_best(monitor_history) < patience:
        return state
    if state.last_decay_epoch is not None and epoch - state.last_decay_epoch < patience:
        return state
    if state.lr <= min_lr:
        return state
    new_lr = max(state.lr * factor, min_lr)
    logger.info(f"Validation loss stalled for {patience} epochs; learning rate {state.lr:.2e} -> {new_lr:.2e}")
    state.lr = new_lr
    state.last_decay_epoch = epoch
    return state


def early_stopping_due(monitor_history, patience=EARLY_STOP_PATIENCE):
    """True once the best value lies `patience` or more epochs in the past."""
    return bool(monitor_history) and _epochs_since_best(monitor_history) >= patience
