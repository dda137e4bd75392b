"""Generalized memory polynomial: basis construction, least-squares fit, model wrapper."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .. import autodiff as ad
from ..autodiff import Node
from ..signal import IqSequence
from .base import SequenceModel

RIDGE_REL = 1e-9


@dataclass(frozen=True)
class GmpConfig:
    """Terms ``x[n-m] * |x[n-m-l]|**(p-1)``.

    Without an explicit ``terms`` list the basis is the full product of
    ``range(memory_depth + 1)`` x ``cross_lags`` x ``orders``.
    """

    memory_depth: int = 4
    orders: tuple[int, ...] = (1, 3, 5, 7)
    cross_lags: tuple[int, ...] = (-1, 0, 1)
    terms: tuple[tuple[int, int, int], ...] | None = field(default=None)

    def __post_init__(self):
        if self.memory_depth < 0:
            raise ValueError("memory_depth must be >= 0")
        if not self.orders or any(p < 1 for p in self.orders):
            raise ValueError("orders must be positive integers")
        object.__setattr__(self, "orders", tuple(int(p) for p in self.orders))
        object.__setattr__(self, "cross_lags", tuple(int(l) for l in self.cross_lags))
        if self.terms is not None:
            object.__setattr__(self, "terms", tuple(tuple(int(v) for v in t) for t in self.terms))

    def term_list(self) -> list[tuple[int, int, int]]:
        if self.terms is not None:
            return list(self.terms)
        return [(m, l, p) for m, l, p in product(range(self.memory_depth + 1), self.cross_lags, self.orders)]

    @property
    def num_terms(self) -> int:
        return len(self.term_list())

    def to_dict(self) -> dict:
        return {"memory_depth": self.memory_depth, "orders": list(self.orders),
                "cross_lags": list(self.cross_lags),
                "terms": None if self.terms is None else [list(t) for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "GmpConfig":
        terms = d.get("terms")
        return cls(int(d["memory_depth"]), tuple(d["orders"]), tuple(d["cross_lags"]),
                   None if terms is None else tuple(tuple(t) for t in terms))


def _shift(z: np.ndarray, k: int) -> np.ndarray:
    """``out[..., n] = z[..., n-k]`` with zeros past either edge."""
    n = z.shape[-1]
    out = np.zeros_like(z)
    if k >= 0:
        if k < n:
            out[..., k:] = z[..., :n - k]
    else:
        if -k < n:
            out[..., :n + k] = z[..., -k:]
    return out


def design_matrix(z: np.ndarray, cfg: GmpConfig) -> np.ndarray:
    """Basis for complex samples ``z`` of shape (..., N); returns (..., N, K)."""
    z = np.asarray(z, dtype=np.complex128)
    amp = np.abs(z)
    cols = []
    for m, l, p in cfg.term_list():
        base = _shift(z, m)
        if p == 1:
            cols.append(base)
        else:
            cols.append(base * _shift(amp, m + l) ** (p - 1))
    return np.stack(cols, axis=-1)


def gmp_design_row(x: IqSequence, n: int, cfg: GmpConfig) -> np.ndarray:
    if not 0 <= n < len(x):
        raise IndexError(f"sample index {n} outside [0, {len(x)})")
    z = x.to_complex()

    def at(k):
        return z[k] if 0 <= k < len(z) else 0.0

    row = []
    for m, l, p in cfg.term_list():
        row.append(at(n - m) * abs(at(n - m - l)) ** (p - 1))
    return np.array(row, dtype=np.complex128)


class GmpModel(SequenceModel):
    family = "gmp"
    trainable_by_gradient = True  # only as a DPD (coefficients through a frozen PA)
    input_differentiable = False

    def __init__(self, hyperparams: dict, seed: int = 0):
        cfg = hyperparams if isinstance(hyperparams, GmpConfig) else GmpConfig.from_dict(
            {"memory_depth": 4, "orders": (1, 3, 5, 7), "cross_lags": (-1, 0, 1), **hyperparams})
        super().__init__(cfg.to_dict(), seed)
        self.config = cfg
        coeffs = np.zeros((cfg.num_terms, 2))
        # start as a pass-through when the plain linear term is present
        for k, t in enumerate(cfg.term_list()):
            if t[0] == 0 and t[2] == 1:
                coeffs[k, 0] = 1.0
                break
        self.params.add("coeffs", coeffs)

    @property
    def coefficients(self) -> np.ndarray:
        c = self.params["coeffs"].value
        return c[:, 0] + 1j * c[:, 1]

    def forward(self, x: Node) -> Node:
        if x.requires_grad:
            raise NotImplementedError("a GMP cannot sit downstream of a trainable model")
        xv = x.value
        phi = design_matrix(xv[..., 0] + 1j * xv[..., 1], self.config)
        return ad.complex_basis_apply(phi, self.params["coeffs"])


def gmp_fit(x: IqSequence, y: IqSequence, cfg: GmpConfig, ridge: float | None = RIDGE_REL) -> GmpModel:
    """Complex least squares for the GMP coefficients, ridge relative to the largest column norm."""
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    phi = design_matrix(x.to_complex(), cfg)
    target = y.to_complex()
    n, k = phi.shape
    if not ridge:
        if n < k:
            raise ValueError(f"{n} samples cannot determine {k} coefficients")
        if np.linalg.matrix_rank(phi) < k:
            raise ValueError("design matrix is rank deficient")
        coef = np.linalg.lstsq(phi, target, rcond=None)[0]
    else:
        lam = ridge * float(np.max(np.sum(np.abs(phi) ** 2, axis=0)))
        a = np.vstack([phi, np.sqrt(lam) * np.eye(k)])
        b = np.concatenate([target, np.zeros(k)])
        coef = np.linalg.lstsq(a, b, rcond=None)[0]
    model = GmpModel(cfg)
    model.params["coeffs"].value = np.stack([coef.real, coef.imag], axis=1)
    return model
