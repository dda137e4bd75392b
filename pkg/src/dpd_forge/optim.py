"""Parameter containers, AdamW and a reduce-on-plateau scheduler."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, parameter


class ParameterSet:
    """Ordered, uniquely named trainable arrays with per-entry freeze flags.

    Frozen entries still collect gradients during :func:`backward`; the
    optimizer simply never touches them.
    """

    def __init__(self):
        self._nodes: dict[str, Node] = {}
        self._frozen: dict[str, bool] = {}

    def add(self, name: str, value, frozen: bool = False) -> Node:
        if name in self._nodes:
            raise ValueError(f"duplicate parameter name {name!r}")
        node = parameter(value, name=name)
        self._nodes[name] = node
        self._frozen[name] = frozen
        return node

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    def __contains__(self, name: str) -> bool:
        return name in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def names(self) -> list[str]:
        return list(self._nodes)

    def items(self):
        return self._nodes.items()

    def is_frozen(self, name: str) -> bool:
        return self._frozen[name]

    def freeze(self, frozen: bool = True) -> None:
        for k in self._frozen:
            self._frozen[k] = frozen

    def trainable(self) -> list[tuple[str, Node]]:
        return [(k, n) for k, n in self._nodes.items() if not self._frozen[k]]

    def zero_grad(self) -> None:
        for n in self._nodes.values():
            n.grad = None

    def count(self) -> int:
        return sum(n.value.size for n in self._nodes.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: n.value.copy() for k, n in self._nodes.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for k, n in self._nodes.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != n.value.shape:
                raise ValueError(f"{k}: shape {v.shape} does not match {n.value.shape}")
            n.value = v.copy()

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, n in self._nodes.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(n.value).tobytes())
        return h.hexdigest()


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "weight_decay": self.weight_decay, "step_count": self.step_count,
            "first_moment": {k: v.ravel().tolist() for k, v in self.first_moment.items()},
            "second_moment": {k: v.ravel().tolist() for k, v in self.second_moment.items()},
        }


def adamw_step(params: ParameterSet, state: AdamWState) -> None:
    """One decoupled-weight-decay Adam update of every non-frozen parameter."""
    trainable = params.trainable()
    for name, node in trainable:
        if node.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, node in trainable:
        g = node.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(node.value)
            v = np.zeros_like(node.value)
        elif m.shape != node.value.shape:
            raise ValueError(f"optimizer state for {name!r} has the wrong shape")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        w = node.value * (1.0 - state.lr * state.weight_decay)
        node.value = w - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class PlateauScheduler:
    """Multiplies the learning rate by ``factor`` after ``patience`` non-improving calls."""

    factor: float = 0.5
    patience: int = 5
    min_lr: float = 1e-6
    best_metric: float = math.inf
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def scheduler_update(s: PlateauScheduler, val_metric: float, lr: float) -> float:
    if not math.isfinite(val_metric):
        raise ValueError("validation metric must be finite")
    if val_metric < s.best_metric:
        s.best_metric = val_metric
        s.epochs_since_improvement = 0
        return lr
    s.epochs_since_improvement += 1
    if s.epochs_since_improvement >= s.patience:
        s.epochs_since_improvement = 0
        return max(lr * s.factor, s.min_lr)
    return lr
