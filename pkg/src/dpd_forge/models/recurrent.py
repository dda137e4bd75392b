"""GRU / LSTM baselines and the dense-skip GRU with online feature extraction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node, fex_features
from .base import SequenceModel, uniform_init

NUM_FEATURES = 6


class FeatureVector(NamedTuple):
    i: float
    q: float
    amp: float
    amp3: float
    sin_theta: float
    cos_theta: float


def fex(i: float, q: float) -> FeatureVector:
    return FeatureVector(*(float(v) for v in fex_features(np.array([i, q], dtype=np.float64))))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GruParams:
    input_weights: np.ndarray      # (3, h, in_dim), gates (z, r, n)
    recurrent_weights: np.ndarray  # (3, h, h)
    input_biases: np.ndarray       # (3, h)
    recurrent_biases: np.ndarray   # (3, h)

    def __post_init__(self):
        g, h, _ = np.shape(self.input_weights)
        if g != 3 or np.shape(self.recurrent_weights) != (3, h, h) \
                or np.shape(self.input_biases) != (3, h) or np.shape(self.recurrent_biases) != (3, h):
            raise ValueError("inconsistent GRU parameter shapes")

    @property
    def hidden_size(self) -> int:
        return self.recurrent_weights.shape[1]

    @classmethod
    def from_stacked(cls, w_ih, w_hh, b_ih, b_hh) -> "GruParams":
        h = w_hh.shape[1]
        return cls(w_ih.reshape(3, h, -1), w_hh.reshape(3, h, h), b_ih.reshape(3, h), b_hh.reshape(3, h))


def gru_step(p: GruParams, x_t, h_prev) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[-1] != p.input_weights.shape[2] or h_prev.shape[-1] != p.hidden_size:
        raise ValueError("dimension mismatch in gru_step")
    W, U, b, c = p.input_weights, p.recurrent_weights, p.input_biases, p.recurrent_biases
    z = _sigmoid(W[0] @ x_t + b[0] + U[0] @ h_prev + c[0])
    r = _sigmoid(W[1] @ x_t + b[1] + U[1] @ h_prev + c[1])
    n = np.tanh(W[2] @ x_t + b[2] + r * (U[2] @ h_prev + c[2]))
    return (1.0 - z) * n + z * h_prev


def lstm_step(p: dict, x_t, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    """``p`` holds stacked ``w_ih`` (4h, in), ``w_hh`` (4h, h), ``b_ih``, ``b_hh``; gates (i, f, g, o)."""
    W, U = p["w_ih"], p["w_hh"]
    h = U.shape[1]
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[-1] != W.shape[1] or np.shape(h_prev)[-1] != h or np.shape(c_prev)[-1] != h:
        raise ValueError("dimension mismatch in lstm_step")
    a = W @ x_t + p["b_ih"] + U @ h_prev + p["b_hh"]
    i = _sigmoid(a[:h])
    f = _sigmoid(a[h:2 * h])
    g = np.tanh(a[2 * h:3 * h])
    o = _sigmoid(a[3 * h:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def gru_cell(x_t: Node, h_prev: Node, w_ih: Node, w_hh: Node, b_ih: Node, b_hh: Node) -> Node:
    """One GRU step assembled from elementary graph ops (slow path, used as a cross-check)."""
    H = w_hh.value.shape[1]
    ax = ad.linear(x_t, w_ih, b_ih)
    ah = ad.linear(h_prev, w_hh, b_hh)
    z = ad.sigmoid(ad.take_last(ax, slice(0, H)) + ad.take_last(ah, slice(0, H)))
    r = ad.sigmoid(ad.take_last(ax, slice(H, 2 * H)) + ad.take_last(ah, slice(H, 2 * H)))
    n = ad.tanh(ad.take_last(ax, slice(2 * H, 3 * H)) + r * ad.take_last(ah, slice(2 * H, 3 * H)))
    return (1.0 - z) * n + z * h_prev


class _RecurrentBase(SequenceModel):
    gates = 3
    cell = "gru"

    def __init__(self, hyperparams: dict, seed: int = 0):
        hp = {"hidden_size": None, "features": "iq", "fc_hidden": 0}
        hp.update(hyperparams)
        super().__init__(hp, seed)
        h = int(hp["hidden_size"])
        if h < 1:
            raise ValueError("hidden_size must be >= 1")
        if hp["features"] not in ("iq", "fex"):
            raise ValueError(f"unknown feature set {hp['features']!r}")
        self.hidden_size = h
        self.in_dim = NUM_FEATURES if hp["features"] == "fex" else 2
        self.fc_hidden = int(hp["fc_hidden"])
        rng = np.random.default_rng(self.seed)
        k = 1.0 / math.sqrt(h)
        g = self.gates
        p = self.params
        p.add("rnn.w_ih", uniform_init(rng, (g * h, self.in_dim), k))
        p.add("rnn.w_hh", uniform_init(rng, (g * h, h), k))
        b_ih = uniform_init(rng, (g * h,), k)
        if self.cell == "lstm":
            b_ih[h:2 * h] = 1.0
        p.add("rnn.b_ih", b_ih)
        p.add("rnn.b_hh", uniform_init(rng, (g * h,), k))
        head_in = self._head_in()
        if self.fc_hidden:
            kf = 1.0 / math.sqrt(head_in)
            p.add("fc.weight", uniform_init(rng, (self.fc_hidden, head_in), kf))
            p.add("fc.bias", uniform_init(rng, (self.fc_hidden,), kf))
            head_in = self.fc_hidden
        ko = 1.0 / math.sqrt(head_in)
        p.add("out.weight", uniform_init(rng, (2, head_in), ko))
        p.add("out.bias", uniform_init(rng, (2,), ko))

    def _head_in(self) -> int:
        return self.hidden_size

    def _features(self, x: Node) -> Node:
        return ad.fex(x) if self.in_dim == NUM_FEATURES else x

    def _rnn(self, feats: Node) -> Node:
        p = self.params
        op = ad.lstm_sequence if self.cell == "lstm" else ad.gru_sequence
        return op(feats, p["rnn.w_ih"], p["rnn.w_hh"], p["rnn.b_ih"], p["rnn.b_hh"])

    def _head(self, z: Node) -> Node:
        p = self.params
        if self.fc_hidden:
            z = ad.tanh(ad.linear(z, p["fc.weight"], p["fc.bias"]))
        return ad.linear(z, p["out.weight"], p["out.bias"])

    def forward(self, x: Node) -> Node:
        return self._head(self._rnn(self._features(x)))

    def gru_params(self) -> GruParams:
        p = self.params
        return GruParams.from_stacked(p["rnn.w_ih"].value, p["rnn.w_hh"].value,
                                      p["rnn.b_ih"].value, p["rnn.b_hh"].value)


class GruModel(_RecurrentBase):
    family = "gru"


class LstmModel(_RecurrentBase):
    family = "lstm"
    gates = 4
    cell = "lstm"


class DgruModel(_RecurrentBase):
    """GRU on extracted features, with the features also routed straight to the output layer."""

    family = "dgru"

    def __init__(self, hyperparams: dict, seed: int = 0):
        hp = dict(hyperparams)
        hp["features"] = "fex"
        hp.setdefault("fc_hidden", 0)
        if hp["fc_hidden"]:
            raise ValueError("dgru has no intermediate dense layer")
        super().__init__(hp, seed)

    def _head_in(self) -> int:
        return self.hidden_size + NUM_FEATURES

    def forward(self, x: Node) -> Node:
        feats = ad.fex(x)
        h = self._rnn(feats)
        return self._head(ad.concat([h, feats], axis=-1))

    def init_identity(self) -> None:
        """Make the model an exact pass-through: output layer reads only the skip-path I/Q."""
        w = np.zeros((2, self.hidden_size + NUM_FEATURES))
        w[0, self.hidden_size] = 1.0
        w[1, self.hidden_size + 1] = 1.0
        self.params["out.weight"].value = w
        self.params["out.bias"].value = np.zeros(2)


def recurrent_param_count(family: str, hidden_size: int, features: str = "iq", fc_hidden: int = 0) -> int:
    """Closed-form real parameter count matching the layer shapes above."""
    h = hidden_size
    gates = 4 if family == "lstm" else 3
    in_dim = NUM_FEATURES if (family == "dgru" or features == "fex") else 2
    n = gates * h * (in_dim + h + 2)
    head_in = h + NUM_FEATURES if family == "dgru" else h
    if fc_hidden:
        n += fc_hidden * (head_in + 1)
        head_in = fc_hidden
    return n + 2 * head_in + 2
