from __future__ import annotations

import numpy as np

from ..autodiff import Node, constant
from ..optim import ParameterSet
from ..signal import IqSequence


class SequenceModel:
    """Trainable map from an I/Q frame batch (B, T, 2) to (B, T, 2).

    Subclasses set ``family``, build their parameters in ``__init__`` and
    implement :meth:`forward`. Every frame starts from a zero state.
    """

    family: str = ""
    trainable_by_gradient: bool = True
    # False when gradients cannot flow back to the input (so the model cannot be the frozen PA)
    input_differentiable: bool = True

    def __init__(self, hyperparams: dict, seed: int = 0):
        self.hyperparams = dict(hyperparams)
        self.seed = int(seed)
        self.params = ParameterSet()

    def forward(self, x: Node) -> Node:
        raise NotImplementedError

    def __call__(self, x: Node) -> Node:
        if x.value.ndim != 3 or x.value.shape[-1] != 2:
            raise ValueError(f"expected (B, T, 2) input, got {x.value.shape}")
        return self.forward(x)

    def predict(self, x) -> np.ndarray:
        """Run over a whole (N, 2) sequence (or IqSequence) without recording gradients."""
        iq = x.iq if isinstance(x, IqSequence) else np.asarray(x, dtype=np.float64)
        return self(constant(iq[None])).value[0]

    def predict_seq(self, x: IqSequence) -> IqSequence:
        return IqSequence(self.predict(x), x.sample_rate_hz)

    def count_params(self) -> int:
        return self.params.count()

    def freeze(self, frozen: bool = True) -> None:
        self.params.freeze(frozen)


def uniform_init(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)
