from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import backward, constant, mse_loss
from .base import SequenceModel


@dataclass
class GradCheckReport:
    checked: int
    worst_rel_error: float
    worst_param: str
    tolerance: float
    failures: list[tuple[str, int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _loss(model: SequenceModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(mse_loss(model(constant(x)), y).value)


def gradient_check(model: SequenceModel, frame, target=None, tolerance: float = 1e-4,
                   step: float = 1e-5, max_samples: int = 200, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central differences of the frame MSE.

    ``frame`` is (T, 2) or (B, T, 2). Without a target, a fixed random one is
    drawn so the loss is not trivially flat. Parameters with more than
    ``max_samples`` scalars in total are subsampled (at least 50 scalars).
    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    rng = np.random.default_rng(seed)
    y = rng.normal(size=x.shape) if target is None else np.asarray(target, dtype=np.float64).reshape(x.shape)

    model.params.zero_grad()
    backward(mse_loss(model(constant(x)), y))
    analytic = {k: n.grad.copy() for k, n in model.params.items()}

    slots = [(k, i) for k, n in model.params.items() for i in range(n.value.size)]
    if len(slots) > max_samples:
        pick = rng.choice(len(slots), size=max(50, max_samples), replace=False)
        slots = [slots[i] for i in sorted(pick)]

    worst, worst_name, failures = 0.0, "", []
    for name, idx in slots:
        node = model.params[name]
        flat = node.value.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + step
        lp = _loss(model, x, y)
        flat[idx] = orig - step
        lm = _loss(model, x, y)
        flat[idx] = orig
        num = (lp - lm) / (2 * step)
        ana = analytic[name].reshape(-1)[idx]
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        if rel > worst:
            worst, worst_name = rel, f"{name}[{idx}]"
        if rel > tolerance:
            failures.append((name, idx, rel))
    return GradCheckReport(len(slots), worst, worst_name, tolerance, failures)
