"""Figures of merit: NMSE, PSD/ACPR, EVM, PAPR and the target gain."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

from .signal import IqSequence
from .waveform import OfdmReference, demodulate

DB_FLOOR_LINEAR = 1e-15
MIN_AMPLITUDE = 1e-12


def to_db(linear: float) -> float:
    return 10.0 * math.log10(max(linear, DB_FLOOR_LINEAR))


def nmse(pred: IqSequence, ref: IqSequence) -> tuple[float, float]:
    if len(pred) != len(ref):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(ref)}")
    energy = float(np.sum(ref.iq ** 2))
    if energy == 0.0:
        raise ValueError("reference has zero energy")
    lin = float(np.sum((pred.iq - ref.iq) ** 2)) / energy
    return lin, to_db(lin)


@dataclass(frozen=True)
class PsdConfig:
    segment_len: int = 1024
    overlap: int = 512
    window: str = "hann"


@dataclass(frozen=True)
class PsdEstimate:
    freqs_hz: np.ndarray
    power_density: np.ndarray
    resolution_bw_hz: float

    @property
    def bin_width_hz(self) -> float:
        return float(self.freqs_hz[1] - self.freqs_hz[0])

    def power_db(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.power_density, DB_FLOOR_LINEAR))

    def band_power(self, lo: float, hi: float) -> float:
        """Integrated power over bins with ``lo <= f < hi``."""
        sel = (self.freqs_hz >= lo) & (self.freqs_hz < hi)
        return float(np.sum(self.power_density[sel]) * self.bin_width_hz)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["freq_hz", "power_db"])
            for f, p in zip(self.freqs_hz, self.power_db()):
                w.writerow([repr(float(f)), repr(float(p))])


def psd(x: IqSequence, segment_len: int = 1024, overlap: int = 512, window: str = "hann") -> PsdEstimate:
    """Two-sided Welch density; integrating it over frequency gives mean power."""
    n = len(x)
    if segment_len > n:
        raise ValueError(f"segment_len {segment_len} exceeds signal length {n}")
    if not 0 <= overlap < segment_len:
        raise ValueError("overlap must satisfy 0 <= overlap < segment_len")
    win = {"hann": "hann", "rect": "boxcar"}.get(window)
    if win is None:
        raise ValueError(f"unknown window {window!r}")
    fs = x.sample_rate_hz
    f, p = sps.welch(x.to_complex(), fs=fs, window=win, nperseg=segment_len, noverlap=overlap,
                     return_onesided=False, detrend=False, scaling="density")
    f = np.fft.fftshift(f)
    p = np.fft.fftshift(p)
    if segment_len % 2 == 0:
        # move the -fs/2 bin to +fs/2 so the axis spans (-fs/2, fs/2]
        f = np.concatenate([f[1:], [fs / 2]])
        p = np.concatenate([p[1:], p[:1]])
    w = sps.get_window(win, segment_len)
    enbw = fs * np.sum(w ** 2) / np.sum(w) ** 2
    return PsdEstimate(f, np.maximum(p, 0.0), float(enbw))


@dataclass(frozen=True)
class ChannelPlan:
    main_center_hz: float = 0.0
    main_bw_hz: float = 200e6
    adjacent_offset_hz: float = 200e6
    # 10 MHz guard at each inner edge keeps estimator leakage out of the adjacent bands
    adjacent_bw_hz: float = 180e6

    def __post_init__(self):
        if self.main_bw_hz <= 0 or self.adjacent_bw_hz <= 0:
            raise ValueError("bandwidths must be positive")
        if self.adjacent_offset_hz - self.adjacent_bw_hz / 2 < self.main_bw_hz / 2 - 1e-6:
            raise ValueError("adjacent bands overlap the main band")

    def bands(self) -> dict[str, tuple[float, float]]:
        c, h, a = self.main_center_hz, self.main_bw_hz / 2, self.adjacent_bw_hz / 2
        return {
            "main": (c - h, c + h),
            "left": (c - self.adjacent_offset_hz - a, c - self.adjacent_offset_hz + a),
            "right": (c + self.adjacent_offset_hz - a, c + self.adjacent_offset_hz + a),
        }


def acpr(x: IqSequence, plan: ChannelPlan | None = None,
         psd_cfg: PsdConfig | None = None) -> tuple[float, float]:
    plan = plan or ChannelPlan()
    psd_cfg = psd_cfg or PsdConfig()
    half = x.sample_rate_hz / 2
    bands = plan.bands()
    for lo, hi in bands.values():
        if lo <= -half or hi > half + 1e-6:
            raise ValueError(f"band [{lo}, {hi}] outside the Nyquist range")
    seg = min(psd_cfg.segment_len, len(x))
    est = psd(x, seg, min(psd_cfg.overlap, seg // 2), psd_cfg.window)
    p_main = est.band_power(*bands["main"])
    if p_main <= 0:
        raise ValueError("no power in the main channel")
    return (to_db(est.band_power(*bands["left"]) / p_main),
            to_db(est.band_power(*bands["right"]) / p_main))


def demod_points(measured: IqSequence, reference: OfdmReference, gain: float) -> np.ndarray:
    """Constellation estimates (symbol, channel, subcarrier) on the reference's scale."""
    if not gain > 0:
        raise ValueError("gain must be positive")
    cfg = reference.config
    z = measured.to_complex() / gain
    spec = demodulate(z, cfg, reference.num_symbols, reference.offset)
    return spec / reference.scale


def evm(measured: IqSequence, reference: OfdmReference, gain: float = 1.0) -> float:
    y = demod_points(measured, reference, gain)
    x = reference.symbols
    lin = float(np.sum(np.abs(y - x) ** 2) / np.sum(np.abs(x) ** 2))
    return to_db(lin)


def target_gain(x: IqSequence, y: IqSequence) -> float:
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    ax = np.hypot(x.iq[:, 0], x.iq[:, 1])
    if np.any(ax < MIN_AMPLITUDE):
        raise ValueError("input contains zero-magnitude samples; target gain is undefined")
    ay = np.hypot(y.iq[:, 0], y.iq[:, 1])
    return float(np.mean(ay / ax))


def papr(x: IqSequence) -> float:
    p = np.sum(x.iq ** 2, axis=1)
    mean = float(np.mean(p))
    if mean == 0.0:
        raise ValueError("zero-energy input")
    return 10.0 * math.log10(float(np.max(p)) / mean)


@dataclass(frozen=True)
class MetricReport:
    nmse_db: float
    acpr_left_dbc: float
    acpr_right_dbc: float
    evm_db: float
    papr_db: float
    gain: float

    @property
    def acpr_mean_dbc(self) -> float:
        return 0.5 * (self.acpr_left_dbc + self.acpr_right_dbc)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})
