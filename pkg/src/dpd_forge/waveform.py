"""Multi-channel OFDM stimulus generation and a synthetic PA with memory."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .signal import IqSequence


@dataclass(frozen=True)
class OfdmConfig:
    num_channels: int = 10
    channel_bw_hz: float = 20e6
    subcarriers_per_channel: int = 64
    qam_order: int = 64
    sample_rate_hz: float = 800e6
    num_symbols: int = 14
    # None -> fft_size // 8 (samples at sample_rate_hz)
    cyclic_prefix_len: int | None = None
    # raised-cosine symbol-edge taper; None -> whole CP. Must fit inside the CP
    # so the DFT window of every symbol is untouched.
    taper_len: int | None = None
    seed: int = 0

    def __post_init__(self):
        m = self.qam_order
        if m < 4 or (m & (m - 1)) != 0 or int(round(math.log2(m))) % 2 != 0:
            raise ValueError(f"qam_order must be a power of 4, got {m}")
        if self.num_channels < 1:
            raise ValueError("num_channels must be >= 1")
        if self.subcarriers_per_channel < 2:
            raise ValueError("subcarriers_per_channel must be >= 2")
        if self.channel_bw_hz <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("bandwidths and sample rate must be positive")
        if self.num_channels * self.channel_bw_hz > self.sample_rate_hz:
            raise ValueError("occupied bandwidth exceeds the sample rate")
        ratio = self.sample_rate_hz / self.subcarrier_spacing_hz
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError("sample rate must be an integer multiple of the subcarrier spacing")
        if self.num_symbols < 1:
            raise ValueError("num_symbols must be >= 1")
        if self.cyclic_prefix_len is not None and self.cyclic_prefix_len < 0:
            raise ValueError("cyclic_prefix_len must be >= 0")
        if self.taper_len is not None and not 0 <= self.taper_len <= self.cp_len:
            raise ValueError("taper_len must lie in [0, cyclic prefix length]")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.channel_bw_hz / self.subcarriers_per_channel

    @property
    def fft_size(self) -> int:
        return int(round(self.sample_rate_hz / self.subcarrier_spacing_hz))

    @property
    def cp_len(self) -> int:
        return self.fft_size // 8 if self.cyclic_prefix_len is None else self.cyclic_prefix_len

    @property
    def taper(self) -> int:
        return self.cp_len if self.taper_len is None else self.taper_len

    @property
    def symbol_len(self) -> int:
        return self.fft_size + self.cp_len

    @property
    def occupied_bw_hz(self) -> float:
        return self.num_channels * self.channel_bw_hz

    def occupied_bins(self) -> np.ndarray:
        """FFT bin indices (0..fft_size-1), shape (channels, subcarriers).

        Channels tile the band contiguously from -occupied_bw/2 upwards, with
        no guard subcarriers.
        """
        n_total = self.num_channels * self.subcarriers_per_channel
        first = -(n_total // 2)
        signed = first + np.arange(n_total)
        return np.mod(signed, self.fft_size).reshape(self.num_channels, self.subcarriers_per_channel)


def qam_constellation(order: int) -> np.ndarray:
    """Square QAM points scaled to unit average power."""
    side = int(round(math.sqrt(order)))
    levels = np.arange(-(side - 1), side, 2, dtype=np.float64)
    pts = (levels[:, None] + 1j * levels[None, :]).reshape(-1)
    return pts / math.sqrt(2.0 * (order - 1) / 3.0)


@dataclass(frozen=True)
class OfdmReference:
    """Transmitted constellation grid, indexed (symbol, channel, subcarrier).

    ``scale`` is the factor applied to the raw inverse DFT to reach unit mean
    power; ``offset`` is the sample index (CP included) where ``symbols[0]``
    starts inside the sequence this reference describes.
    """

    symbols: np.ndarray
    config: OfdmConfig
    scale: float
    offset: int = 0

    @property
    def num_symbols(self) -> int:
        return self.symbols.shape[0]

    def segment(self, start: int, length: int) -> "OfdmReference":
        """Reference restricted to symbols lying wholly inside [start, start+length)."""
        L = self.config.symbol_len
        first = max(0, -(-(start - self.offset) // L))
        stop = (start + length - self.offset) // L
        stop = min(stop, self.num_symbols)
        if stop <= first:
            raise ValueError("segment contains no complete OFDM symbol")
        return OfdmReference(self.symbols[first:stop], self.config, self.scale,
                             self.offset + first * L - start)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["symbol", "channel", "subcarrier", "I", "Q"])
            for s, c, k in np.ndindex(self.symbols.shape):
                z = self.symbols[s, c, k]
                w.writerow([s, c, k, repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def read_csv(cls, path, config: OfdmConfig, scale: float, offset: int = 0) -> "OfdmReference":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["symbol", "channel", "subcarrier", "I", "Q"]:
                raise ValueError(f"{path}: unexpected header {header}")
            rows = [r for r in reader if r]
        # the grid holds only the symbols written, which may be fewer than config.num_symbols
        n_sym = max((int(r[0]) for r in rows), default=-1) + 1
        grid = np.zeros((n_sym, config.num_channels, config.subcarriers_per_channel), dtype=np.complex128)
        for s, c, k, i, q in rows:
            grid[int(s), int(c), int(k)] = float(i) + 1j * float(q)
        return cls(grid, config, scale, offset)


def modulate(grid: np.ndarray, cfg: OfdmConfig) -> np.ndarray:
    """Unscaled OFDM modulation of a (symbol, channel, subcarrier) grid.

    Each symbol is the plain inverse DFT (numpy normalisation) of the
    occupied bins, preceded by its cyclic prefix. With a nonzero taper the
    symbol is cyclically extended by ``taper`` samples at the end and both
    edges are raised-cosine weighted; the tail overlaps the next symbol's
    prefix only.
    """
    bins = cfg.occupied_bins().reshape(-1)
    n_sym = grid.shape[0]
    spectrum = np.zeros((n_sym, cfg.fft_size), dtype=np.complex128)
    spectrum[:, bins] = grid.reshape(n_sym, -1)
    body = np.fft.ifft(spectrum, axis=1)
    cp, w, L = cfg.cp_len, cfg.taper, cfg.symbol_len
    if cp:
        body = np.concatenate([body[:, -cp:], body], axis=1)
    if w == 0:
        return body.reshape(-1)
    ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(w) + 0.5) / w)
    ext = np.concatenate([body, body[:, cp:cp + w]], axis=1)
    ext[:, :w] *= ramp
    ext[:, -w:] *= ramp[::-1]
    out = np.zeros(n_sym * L + w, dtype=np.complex128)
    for j in range(n_sym):
        out[j * L:j * L + L + w] += ext[j]
    return out[:n_sym * L]


def demodulate(z: np.ndarray, cfg: OfdmConfig, num_symbols: int, offset: int = 0) -> np.ndarray:
    """Inverse of :func:`modulate`: strip CP, DFT each symbol, pick occupied bins."""
    L = cfg.symbol_len
    need = offset + num_symbols * L
    if offset < 0 or len(z) < need:
        raise ValueError(f"signal of length {len(z)} does not cover {num_symbols} symbols at offset {offset}")
    blocks = z[offset:need].reshape(num_symbols, L)[:, cfg.cp_len:]
    spec = np.fft.fft(blocks, axis=1)
    bins = cfg.occupied_bins()
    return spec[:, bins]


def generate_ofdm(cfg: OfdmConfig) -> tuple[IqSequence, OfdmReference]:
    rng = np.random.default_rng(cfg.seed)
    const = qam_constellation(cfg.qam_order)
    idx = rng.integers(0, cfg.qam_order,
                       size=(cfg.num_symbols, cfg.num_channels, cfg.subcarriers_per_channel))
    grid = const[idx]
    raw = modulate(grid, cfg)
    scale = 1.0 / math.sqrt(np.mean(np.abs(raw) ** 2))
    ref = OfdmReference(grid, cfg, scale, 0)
    return IqSequence.from_complex(raw * scale, cfg.sample_rate_hz), ref


# --- synthetic PA ----------------------------------------------------------

@dataclass(frozen=True)
class SynthPaConfig:
    """Memory-polynomial PA with optional soft saturation and amplitude quantisation.

    ``coefficients[m, k]`` multiplies ``u[n-m] * |u[n-m]|**(2k)``, i.e. odd
    order ``p = 2k + 1``.
    """

    memory_depth: int
    nonlinearity_order: int
    coefficients: np.ndarray
    saturation_level: float | None = None
    amplitude_quantization_bits: int | None = None
    noise_snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.complex128)
        if self.memory_depth < 0 or self.nonlinearity_order < 1:
            raise ValueError("memory_depth must be >= 0 and nonlinearity_order >= 1")
        want = (self.memory_depth + 1, (self.nonlinearity_order + 1) // 2)
        if c.shape != want:
            raise ValueError(f"coefficient array must have shape {want}, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if self.saturation_level is not None and not self.saturation_level > 0:
            raise ValueError("saturation_level must be positive")
        if self.amplitude_quantization_bits is not None and self.amplitude_quantization_bits < 1:
            raise ValueError("amplitude_quantization_bits must be >= 1")
        object.__setattr__(self, "coefficients", c)

    def to_dict(self) -> dict:
        d = asdict(self)
        c = self.coefficients
        d["coefficients"] = {"re": c.real.tolist(), "im": c.imag.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthPaConfig":
        d = dict(d)
        c = d.pop("coefficients")
        coeffs = np.asarray(c["re"], dtype=np.float64) + 1j * np.asarray(c["im"], dtype=np.float64)
        return cls(coefficients=coeffs, **d)


# Operating point of the default device. The OFDM stimulus (unit power) is
# scaled to DEFAULT_DRIVE_RMS before entering the PA.
DEFAULT_DRIVE_RMS = 0.25
DEFAULT_SAT_RATIO = 4.0


def default_synth_pa(drive_rms: float = DEFAULT_DRIVE_RMS, sat_ratio: float | None = DEFAULT_SAT_RATIO,
                     seed: int = 7, memory_depth: int = 3, order: int = 7) -> SynthPaConfig:
    """The pinned device used by the acceptance experiments.

    ``|c[m, k]| = 0.3**m * 0.5**k`` with seeded phases and ``c[0, 0] = 1``;
    soft saturation sits at ``sat_ratio`` times the drive RMS.
    """
    rng = np.random.default_rng(seed)
    n_k = (order + 1) // 2
    m = np.arange(memory_depth + 1)[:, None]
    k = np.arange(n_k)[None, :]
    mag = 0.3 ** m * 0.5 ** k
    phase = rng.uniform(-np.pi, np.pi, size=mag.shape)
    coeffs = mag * np.exp(1j * phase)
    coeffs[0, 0] = 1.0
    sat = None if sat_ratio is None else sat_ratio * drive_rms
    return SynthPaConfig(memory_depth, order, coeffs, saturation_level=sat, seed=seed)


def synth_pa_forward(cfg: SynthPaConfig, u: IqSequence) -> IqSequence:
    z = u.to_complex()
    n = len(z)
    if n == 0:
        raise ValueError("empty input")
    env2 = np.abs(z) ** 2
    y = np.zeros(n, dtype=np.complex128)
    for m in range(cfg.memory_depth + 1):
        # basis for this delay: sum_k c[m,k] * |u|^(2k), applied to u then delayed by m
        gain = np.zeros(n, dtype=np.complex128)
        for k in range(cfg.coefficients.shape[1]):
            c = cfg.coefficients[m, k]
            if c != 0:
                gain += c * env2 ** k
        term = gain * z
        if m == 0:
            y += term
        elif m < n:
            y[m:] += term[:-m]
    if cfg.saturation_level is not None:
        r = np.abs(y) / cfg.saturation_level
        safe = np.where(r > 0, r, 1.0)
        y = np.where(r > 0, y * np.tanh(safe) / safe, y)
    if cfg.amplitude_quantization_bits is not None:
        full_scale = cfg.saturation_level if cfg.saturation_level is not None else 1.0
        step = full_scale / (2 ** cfg.amplitude_quantization_bits - 1)
        a = np.abs(y)
        q = np.clip(np.round(a / step), 0, 2 ** cfg.amplitude_quantization_bits - 1) * step
        y = np.where(a > 0, y * (q / np.where(a > 0, a, 1.0)), 0)
    if cfg.noise_snr_db is not None:
        rng = np.random.default_rng(cfg.seed)
        p = np.mean(np.abs(y) ** 2) / 10 ** (cfg.noise_snr_db / 10)
        y = y + math.sqrt(p / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return IqSequence.from_complex(y, u.sample_rate_hz)


def with_seed(cfg: OfdmConfig, seed: int) -> OfdmConfig:
    return replace(cfg, seed=seed)


def ofdm_for_length(n_samples: int, base: OfdmConfig | None = None, seed: int | None = None) -> OfdmConfig:
    """Config with just enough symbols to cover ``n_samples``."""
    base = base or OfdmConfig()
    n_sym = max(1, -(-n_samples // base.symbol_len))
    kw = {"num_symbols": n_sym}
    if seed is not None:
        kw["seed"] = seed
    return replace(base, **kw)


def generate_stimulus(n_samples: int, drive_rms: float = DEFAULT_DRIVE_RMS,
                      base: OfdmConfig | None = None, seed: int | None = None,
                      allow_partial: bool = False) -> tuple[IqSequence, OfdmReference | None]:
    """OFDM stimulus of exactly ``n_samples`` at RMS ``drive_rms``.

    The reference keeps only symbols lying wholly inside the returned
    samples and its scale already includes the drive level. A stimulus
    shorter than one symbol is an error unless ``allow_partial``, in which
    case the reference is None.
    """
    if n_samples < 1 or not drive_rms > 0:
        raise ValueError("n_samples and drive_rms must be positive")
    cfg = ofdm_for_length(n_samples, base, seed)
    x, ref = generate_ofdm(cfg)
    x = x.slice(0, n_samples).scaled(drive_rms)
    n_full = min(ref.num_symbols, n_samples // cfg.symbol_len)
    if n_full < 1:
        if allow_partial:
            return x, None
        raise ValueError(f"{n_samples} samples do not hold one OFDM symbol ({cfg.symbol_len} samples)")
    return x, OfdmReference(ref.symbols[:n_full], cfg, ref.scale * drive_rms, 0)
