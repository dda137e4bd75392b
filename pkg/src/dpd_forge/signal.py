"""Baseband I/Q containers, framing and dataset partitioning.

Samples are always held as paired reals in an ``(N, 2)`` float64 array
(column 0 = I, column 1 = Q). Complex views are produced on demand for
DSP code but never stored.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SPLIT_NAMES = ("train", "val", "test")


class IqSample(NamedTuple):
    i: float
    q: float


@dataclass(frozen=True)
class IqSequence:
    iq: np.ndarray
    sample_rate_hz: float = 800e6

    def __post_init__(self):
        iq = np.ascontiguousarray(self.iq, dtype=np.float64)
        if iq.ndim != 2 or iq.shape[1] != 2:
            raise ValueError(f"expected an (N, 2) array of I/Q pairs, got shape {iq.shape}")
        if iq.shape[0] < 1:
            raise ValueError("an IqSequence needs at least one sample")
        if not np.all(np.isfinite(iq)):
            raise ValueError("I/Q samples must be finite")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        iq.setflags(write=False)
        object.__setattr__(self, "iq", iq)

    @classmethod
    def from_complex(cls, z, sample_rate_hz: float = 800e6) -> "IqSequence":
        z = np.asarray(z, dtype=np.complex128).reshape(-1)
        return cls(np.stack([z.real, z.imag], axis=1), sample_rate_hz)

    def to_complex(self) -> np.ndarray:
        return self.iq[:, 0] + 1j * self.iq[:, 1]

    def __len__(self) -> int:
        return self.iq.shape[0]

    def __getitem__(self, n: int) -> IqSample:
        i, q = self.iq[n]
        return IqSample(float(i), float(q))

    def __iter__(self) -> Iterator[IqSample]:
        for i, q in self.iq:
            yield IqSample(float(i), float(q))

    @property
    def samples(self) -> list[IqSample]:
        return list(self)

    def slice(self, start: int, stop: int) -> "IqSequence":
        return IqSequence(self.iq[start:stop], self.sample_rate_hz)

    def scaled(self, gain: float) -> "IqSequence":
        return IqSequence(self.iq * gain, self.sample_rate_hz)


@dataclass(frozen=True)
class Frame:
    input: np.ndarray
    target: np.ndarray
    start_index: int


@dataclass(frozen=True)
class FramedDataset:
    """Overlapping windows over an input/target pair.

    ``inputs`` and ``targets`` are ``(K, T, 2)`` read-only views into the
    source sequences, so framing a long capture costs no copies.
    """

    inputs: np.ndarray
    targets: np.ndarray
    frame_len: int
    stride: int

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def start_indices(self) -> np.ndarray:
        return np.arange(len(self)) * self.stride

    @property
    def frames(self) -> list[Frame]:
        return [
            Frame(self.inputs[k], self.targets[k], int(k * self.stride))
            for k in range(len(self))
        ]


def frame_sequence(x: IqSequence, y: IqSequence, frame_len: int, stride: int) -> FramedDataset:
    """Cut ``x``/``y`` into frames of ``frame_len`` samples, ``stride`` apart.

    Trailing samples that cannot fill a whole frame are dropped.
    """
    n = len(x)
    if len(y) != n:
        raise ValueError(f"input/target length mismatch: {n} vs {len(y)}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if frame_len < 1 or frame_len > n:
        raise ValueError(f"frame_len must lie in [1, {n}], got {frame_len}")
    if stride > frame_len:
        raise ValueError("stride must not exceed frame_len")

    def windows(a: np.ndarray) -> np.ndarray:
        # (N-T+1, 2, T) -> (N-T+1, T, 2), then keep every stride-th window
        w = sliding_window_view(a, frame_len, axis=0).transpose(0, 2, 1)
        return w[::stride]

    return FramedDataset(windows(x.iq), windows(y.iq), frame_len, stride)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[IqSequence, IqSequence]
    validation: tuple[IqSequence, IqSequence]
    test: tuple[IqSequence, IqSequence]
    bounds: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    def part(self, name: str) -> tuple[IqSequence, IqSequence]:
        return {"train": self.train, "val": self.validation, "validation": self.validation,
                "test": self.test}[name]


def split_lengths(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")
    if n < 3:
        raise ValueError("need at least 3 samples to split")
    # the 1e-9 guard keeps e.g. 0.6 * 38400 = 23039.999... from truncating down
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(x: IqSequence, y: IqSequence,
                  ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> DatasetSplit:
    """Contiguous train/validation/test partition; leftover samples go to test."""
    if len(x) != len(y):
        raise ValueError(f"input/output length mismatch: {len(x)} vs {len(y)}")
    n_train, n_val, n_test = split_lengths(len(x), ratios)
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("a partition would be empty")
    a, b = n_train, n_train + n_val
    return DatasetSplit(
        train=(x.slice(0, a), y.slice(0, a)),
        validation=(x.slice(a, b), y.slice(a, b)),
        test=(x.slice(b, len(x)), y.slice(b, len(y))),
        bounds=(0, a, b, len(x)),
    )


# --- CSV I/O ---------------------------------------------------------------

def write_iq_csv(path, seq: IqSequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["I", "Q"])
        for i, q in seq.iq:
            w.writerow([repr(float(i)), repr(float(q))])


def read_iq_csv(path, sample_rate_hz: float = 800e6) -> IqSequence:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["I", "Q"]:
            raise ValueError(f"{path}: expected header 'I,Q', got {header}")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no samples")
    return IqSequence(np.array(rows, dtype=np.float64), sample_rate_hz)


def write_dataset_dir(out_dir, split: DatasetSplit) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, (x, y) in zip(SPLIT_NAMES, (split.train, split.validation, split.test)):
        write_iq_csv(out / f"{name}_input.csv", x)
        write_iq_csv(out / f"{name}_output.csv", y)


def read_dataset_dir(data_dir, sample_rate_hz: float = 800e6) -> DatasetSplit:
    d = Path(data_dir)
    parts = []
    for name in SPLIT_NAMES:
        parts.append((read_iq_csv(d / f"{name}_input.csv", sample_rate_hz),
                      read_iq_csv(d / f"{name}_output.csv", sample_rate_hz)))
    a = len(parts[0][0])
    b = a + len(parts[1][0])
    return DatasetSplit(*parts, bounds=(0, a, b, b + len(parts[2][0])))
