"""Command-line front end: datagen, train-pa, train-dpd, eval, sweep, export-plots.

Every command prints exactly one JSON object on stdout; logs go to stderr.
Exit codes: 0 ok, 2 config error, 3 I/O error, 4 divergence, 5 artifact-load error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .metrics import ChannelPlan, PsdConfig, demod_points, psd
from .models import CheckpointError
from .pipeline import (DivergenceError, GoldCheckpoint, TrainConfig, TrainHistory, predistort, resolve_gain,
                       sim_eval, sweep_budgets, train_dpd, train_pa, validation_reference)
from .signal import DatasetSplit, read_dataset_dir, split_dataset, write_dataset_dir, write_iq_csv
from .waveform import (DEFAULT_DRIVE_RMS, DEFAULT_SAT_RATIO, OfdmConfig, OfdmReference, SynthPaConfig,
                       default_synth_pa, generate_stimulus, ofdm_for_length, synth_pa_forward)

log = logging.getLogger("dpd_forge")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_LOAD = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WaveformSection(_Section):
    n_samples: int = Field(38400, ge=3)
    num_channels: int = 10
    channel_bw_hz: float = 20e6
    subcarriers_per_channel: int = 64
    qam_order: int = 64
    sample_rate_hz: float = 800e6
    cyclic_prefix_len: int | None = None
    taper_len: int | None = None
    drive_rms: float = Field(DEFAULT_DRIVE_RMS, gt=0)
    seed: int = Field(0, ge=0)


class SynthPaSection(_Section):
    memory_depth: int = Field(3, ge=0)
    nonlinearity_order: int = Field(7, ge=1)
    # saturation in multiples of the drive RMS; null disables it
    sat_ratio: float | None = DEFAULT_SAT_RATIO
    amplitude_quantization_bits: int | None = None
    noise_snr_db: float | None = None
    seed: int = Field(7, ge=0)


class ModelSpec(_Section):
    family: Literal["gru", "lstm", "dgru", "gmp"] = "dgru"
    hyperparams: dict = Field(default_factory=lambda: {"hidden_size": 9})


class ModelSection(_Section):
    pa: ModelSpec = Field(default_factory=ModelSpec)
    dpd: ModelSpec = Field(default_factory=ModelSpec)


class TrainSection(_Section):
    epochs: int = 100
    batch_size: int = 64
    frame_len: int = 50
    stride: int = 1
    initial_lr: float = 1e-3
    seed: int = 0
    target_gain_mode: Literal["auto"] | float = "auto"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_factor: float = 0.5
    lr_patience: int = 5
    min_lr: float = 1e-6
    dpd_init: Literal["identity", "random"] = "identity"


class MetricsSection(_Section):
    segment_len: int = 1024
    overlap: int = 512
    window: Literal["hann", "rect"] = "hann"
    main_center_hz: float = 0.0
    main_bw_hz: float = 200e6
    adjacent_offset_hz: float = 200e6
    adjacent_bw_hz: float = 180e6


class PathsSection(_Section):
    data: str | None = None
    out: str | None = None
    pa_ckpt: str | None = None
    dpd_ckpt: str | None = None


class RunConfigFile(_Section):
    waveform: WaveformSection = Field(default_factory=WaveformSection)
    synth_pa: SynthPaSection = Field(default_factory=SynthPaSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    paths: PathsSection = Field(default_factory=PathsSection)

    def ofdm(self) -> OfdmConfig:
        w = self.waveform
        return OfdmConfig(num_channels=w.num_channels, channel_bw_hz=w.channel_bw_hz,
                          subcarriers_per_channel=w.subcarriers_per_channel, qam_order=w.qam_order,
                          sample_rate_hz=w.sample_rate_hz, cyclic_prefix_len=w.cyclic_prefix_len,
                          taper_len=w.taper_len, seed=w.seed)

    def pa(self) -> SynthPaConfig:
        s = self.synth_pa
        base = default_synth_pa(self.waveform.drive_rms, s.sat_ratio, s.seed, s.memory_depth,
                                s.nonlinearity_order)
        return SynthPaConfig(base.memory_depth, base.nonlinearity_order, base.coefficients,
                             base.saturation_level, s.amplitude_quantization_bits, s.noise_snr_db, s.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train.model_dump())

    def plan(self) -> ChannelPlan:
        m = self.metrics
        return ChannelPlan(m.main_center_hz, m.main_bw_hz, m.adjacent_offset_hz, m.adjacent_bw_hz)

    def psd_config(self) -> PsdConfig:
        m = self.metrics
        return PsdConfig(m.segment_len, m.overlap, m.window)


def load_config(path: str | None, seed: int | None = None) -> RunConfigFile:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"config {path} is not valid JSON: {exc}") from exc
    try:
        cfg = RunConfigFile.model_validate(doc)
        if seed is not None:
            cfg.waveform.seed = seed
            cfg.train.seed = seed
        # surface invalid combinations now rather than mid-run
        cfg.ofdm(), cfg.pa(), cfg.train_config(), cfg.plan(), cfg.psd_config()
    except (ValidationError, ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from exc
    return cfg


# --- helpers ---------------------------------------------------------------

def _require(value, flag: str):
    if value is None:
        raise CliError(EXIT_CONFIG, f"{flag} is required")
    return value


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {out}: {exc}") from exc
    return out


def _finite(obj):
    """NaN and infinities become null so every emitted document is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _line_json(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True, allow_nan=False) + "\n"


def _dump_json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_history(path: Path, history: TrainHistory) -> None:
    keys = list(history.records[0]) if history.records else ["epoch"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in history.records:
            w.writerow([repr(float(r[k])) if k != "epoch" else r[k] for k in keys])


def _load_split(data_dir: str, cfg: RunConfigFile) -> DatasetSplit:
    try:
        return read_dataset_dir(data_dir, cfg.waveform.sample_rate_hz)
    except (OSError, ValueError, IndexError) as exc:
        raise CliError(EXIT_IO, f"cannot read dataset {data_dir}: {exc}") from exc


def _load_reference(data_dir: str) -> OfdmReference | None:
    d = Path(data_dir)
    if not (d / "meta.json").exists() or not (d / "reference.csv").exists():
        return None
    try:
        meta = json.loads((d / "meta.json").read_text())
        ocfg = OfdmConfig(**meta["ofdm"])
        return OfdmReference.read_csv(d / "reference.csv", ocfg, meta["reference_scale"], 0)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_IO, f"cannot read reference in {data_dir}: {exc}") from exc


def _load_gold(path: str) -> GoldCheckpoint:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_LOAD, f"cannot read checkpoint {path}: {exc}") from exc
    try:
        return GoldCheckpoint.loads(text)
    except (CheckpointError, ValueError) as exc:
        raise CliError(EXIT_LOAD, f"cannot load checkpoint {path}: {exc}") from exc


def _emit(obj: dict) -> None:
    sys.stdout.write(_line_json(obj))
    sys.stdout.flush()


# --- commands --------------------------------------------------------------

def cmd_datagen(cfg: RunConfigFile, out: str) -> dict:
    out_dir = _out_dir(out)
    x, ref = generate_stimulus(cfg.waveform.n_samples, cfg.waveform.drive_rms, cfg.ofdm(), allow_partial=True)
    pa = cfg.pa()
    y = synth_pa_forward(pa, x)
    split = split_dataset(x, y)
    try:
        write_dataset_dir(out_dir, split)
        # too short for a whole OFDM symbol: no reference, so EVM is reported as NaN downstream
        if ref is not None:
            ref.write_csv(out_dir / "reference.csv")
        ocfg = ref.config if ref is not None else ofdm_for_length(len(x), cfg.ofdm())
        meta = {
            "sample_rate_hz": x.sample_rate_hz,
            "n_samples": len(x),
            "drive_rms": cfg.waveform.drive_rms,
            "seeds": {"waveform": ocfg.seed, "synth_pa": pa.seed},
            "ofdm": {k: getattr(ocfg, k) for k in OfdmConfig.__dataclass_fields__},
            "reference_scale": ref.scale if ref is not None else None,
            "synth_pa": pa.to_dict(),
            "split": list(split.bounds),
        }
        (out_dir / "meta.json").write_text(_dump_json(meta))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write dataset: {exc}") from exc
    return {"command": "datagen", "out": str(out_dir), "n_samples": len(x),
            "train": len(split.train[0]), "val": len(split.validation[0]), "test": len(split.test[0])}


def _write_run(out_dir: Path, cfg: RunConfigFile, data: str, history: TrainHistory) -> None:
    doc = cfg.model_dump()
    doc["paths"]["data"] = str(Path(data).resolve())
    (out_dir / "config.json").write_text(_dump_json(doc))
    _write_history(out_dir / "history.csv", history)


def cmd_train_pa(cfg: RunConfigFile, data: str, out: str) -> dict:
    split = _load_split(data, cfg)
    out_dir = _out_dir(out)
    gold, history = train_pa(split, cfg.model.pa.model_dump(), cfg.train_config())
    _write_run(out_dir, cfg, data, history)
    (out_dir / "gold_pa.json").write_text(gold.dumps())
    return {"command": "train-pa", "family": gold.model.family, "params": gold.model.count_params(),
            "epoch": gold.epoch, "val_nmse_db": gold.metric_value}


def cmd_train_dpd(cfg: RunConfigFile, data: str, pa_ckpt: str, out: str) -> dict:
    pa_text_path = Path(pa_ckpt)
    pa_gold = _load_gold(pa_ckpt)
    split = _load_split(data, cfg)
    ref = _load_reference(data)
    out_dir = _out_dir(out)
    gold, history = train_dpd(split, pa_gold, cfg.model.dpd.model_dump(), cfg.train_config(), ref,
                              cfg.plan(), cfg.psd_config())
    _write_run(out_dir, cfg, data, history)
    (out_dir / "gold_dpd.json").write_text(gold.dumps())
    (out_dir / "gold_pa.json").write_bytes(pa_text_path.read_bytes())
    return {"command": "train-dpd", "family": gold.model.family, "params": gold.model.count_params(),
            "epoch": gold.epoch, "val_acpr_mean_dbc": gold.metric_value, "gain": gold.gain}


def cmd_eval(cfg: RunConfigFile, data: str, pa_ckpt: str, dpd_ckpt: str | None, out: str | None) -> dict:
    pa_gold = _load_gold(pa_ckpt)
    dpd_gold = _load_gold(dpd_ckpt) if dpd_ckpt is not None else None
    split = _load_split(data, cfg)
    ref = validation_reference(_load_reference(data), split, "test")
    if dpd_gold is not None and dpd_gold.gain is not None:
        gain = float(dpd_gold.gain)
    else:
        gain = resolve_gain(split, cfg.train_config())
    x_test = split.test[0]
    report = sim_eval(dpd_gold, pa_gold, x_test, ref, cfg.plan(), gain, cfg.psd_config())
    result = {"command": "eval", "dpd": dpd_gold is not None, **report.to_dict()}
    if out is not None:
        out_dir = _out_dir(out)
        (out_dir / "report.json").write_text(_line_json(result))
        if dpd_gold is not None:
            write_iq_csv(out_dir / "predistorted.csv", predistort(dpd_gold, x_test))
    return result


def parse_budgets(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(EXIT_CONFIG, f"budgets must be integers, got {text!r}") from None
    if not vals or any(v <= 0 for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
        raise CliError(EXIT_CONFIG, f"budgets must be ascending positive integers, got {text!r}")
    return vals


def parse_families(text: str) -> list[str]:
    fams = [t.strip() for t in text.split(",") if t.strip()]
    bad = [f for f in fams if f not in ("gru", "lstm", "dgru", "gmp")]
    if not fams or bad:
        raise CliError(EXIT_CONFIG, f"unknown families {bad or text!r}")
    return fams


def cmd_sweep(cfg: RunConfigFile, data: str, pa_ckpt: str, budgets: list[int], families: list[str],
              out: str, jobs: int = 1) -> dict:
    pa_gold = _load_gold(pa_ckpt)
    split = _load_split(data, cfg)
    ref = _load_reference(data)
    out_dir = _out_dir(out)
    rows = sweep_budgets(families, budgets, split, pa_gold, cfg.train_config(), ref, cfg.plan(),
                         cfg.psd_config(), jobs=jobs)
    path = out_dir / "sweep_table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "params", "sim_acpr_l_dbc", "sim_acpr_r_dbc", "sim_evm_db"])
        for r in rows:
            w.writerow([r.family, r.params, repr(r.sim_acpr_l_dbc), repr(r.sim_acpr_r_dbc), repr(r.sim_evm_db)])
    failed = sum(1 for r in rows if math.isnan(r.sim_acpr_l_dbc))
    return {"command": "sweep", "rows": len(rows), "failed": failed, "table": str(path)}


def cmd_export_plots(run_dir: str, cfg_override: RunConfigFile | None = None) -> dict:
    run = Path(run_dir)
    needed = ["config.json", "history.csv", "gold_pa.json", "gold_dpd.json"]
    missing = [n for n in needed if not (run / n).exists()]
    if missing:
        raise CliError(EXIT_LOAD, f"run directory {run} lacks {', '.join(missing)}")
    try:
        doc = json.loads((run / "config.json").read_text())
        cfg = cfg_override or RunConfigFile.model_validate(doc)
    except (json.JSONDecodeError, ValidationError) as exc:
        raise CliError(EXIT_LOAD, f"bad run config: {exc}") from exc
    data = _require(cfg.paths.data, "paths.data in the run config")
    pa_gold = _load_gold(str(run / "gold_pa.json"))
    dpd_gold = _load_gold(str(run / "gold_dpd.json"))
    split = _load_split(data, cfg)
    ref = validation_reference(_load_reference(data), split, "test")
    gain = float(dpd_gold.gain) if dpd_gold.gain is not None else resolve_gain(split, cfg.train_config())
    x = split.test[0]
    pcfg = cfg.psd_config()
    seg = min(pcfg.segment_len, len(x))
    y_no = pa_gold.model.predict_seq(x)
    y_dpd = pa_gold.model.predict_seq(predistort(dpd_gold, x))
    p_no = psd(y_no, seg, min(pcfg.overlap, seg // 2), pcfg.window)
    p_dpd = psd(y_dpd, seg, min(pcfg.overlap, seg // 2), pcfg.window)
    with open(run / "psd.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz", "power_db_no_dpd", "power_db_dpd"])
        for f, a, b in zip(p_no.freqs_hz, p_no.power_db(), p_dpd.power_db()):
            w.writerow([repr(float(f)), repr(float(a)), repr(float(b))])
    n_points = 0
    with open(run / "constellation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["I", "Q", "channel"])
        if ref is not None:
            pts = demod_points(y_dpd, ref, gain)
            for s, c, k in np.ndindex(pts.shape):
                z = pts[s, c, k]
                w.writerow([repr(float(z.real)), repr(float(z.imag)), c])
            n_points = pts.size
    hist = (run / "history.csv").read_text()
    (run / "learning_curves.csv").write_text(hist)
    return {"command": "export-plots", "psd_bins": len(p_no.freqs_hz), "constellation_points": n_points,
            "epochs": max(0, len(hist.strip().splitlines()) - 1)}


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpd-forge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--seed", type=int, help="overrides waveform and training seeds")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("datagen", help="generate an OFDM/PA dataset")
    common(sp)
    sp.add_argument("--out")

    sp = sub.add_parser("train-pa", help="fit a PA behavioral model")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--out")

    sp = sub.add_parser("train-dpd", help="learn a DPD through a frozen PA model")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--pa-ckpt")
    sp.add_argument("--out")

    sp = sub.add_parser("eval", help="simulated metrics on the test partition")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--pa-ckpt")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--dpd-ckpt")
    g.add_argument("--no-dpd", action="store_true")
    sp.add_argument("--out")

    sp = sub.add_parser("sweep", help="budget-matched DPD sweep")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--pa-ckpt")
    sp.add_argument("--budgets", required=True, help="comma-separated ascending parameter budgets")
    sp.add_argument("--families", default="gru,lstm,dgru")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")

    sp = sub.add_parser("export-plots", help="plot data from a DPD run directory")
    common(sp)
    sp.add_argument("run_dir", nargs="?")
    sp.add_argument("--out", help="run directory (alternative to the positional argument)")
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        paths = cfg.paths
        out = getattr(args, "out", None) or paths.out
        data = getattr(args, "data", None) or paths.data
        pa_ckpt = getattr(args, "pa_ckpt", None) or paths.pa_ckpt
        if args.command == "datagen":
            result = cmd_datagen(cfg, _require(out, "--out"))
        elif args.command == "train-pa":
            result = cmd_train_pa(cfg, _require(data, "--data"), _require(out, "--out"))
        elif args.command == "train-dpd":
            result = cmd_train_dpd(cfg, _require(data, "--data"), _require(pa_ckpt, "--pa-ckpt"),
                                   _require(out, "--out"))
        elif args.command == "eval":
            dpd = None if args.no_dpd else (args.dpd_ckpt or paths.dpd_ckpt)
            if dpd is None and not args.no_dpd:
                raise CliError(EXIT_CONFIG, "eval needs --dpd-ckpt or --no-dpd")
            result = cmd_eval(cfg, _require(data, "--data"), _require(pa_ckpt, "--pa-ckpt"), dpd, out)
        elif args.command == "sweep":
            if args.jobs < 1:
                raise CliError(EXIT_CONFIG, "--jobs must be >= 1")
            result = cmd_sweep(cfg, _require(data, "--data"), _require(pa_ckpt, "--pa-ckpt"),
                               parse_budgets(args.budgets), parse_families(args.families),
                               _require(out, "--out"), args.jobs)
        else:
            result = cmd_export_plots(_require(args.run_dir or args.out, "run_dir"))
    except CliError as exc:
        log.error("%s", exc)
        _emit({"error": str(exc), "exit_code": exc.code})
        return exc.code
    except DivergenceError as exc:
        log.error("%s", exc)
        _emit({"error": str(exc), "exit_code": EXIT_DIVERGED})
        return EXIT_DIVERGED
    except CheckpointError as exc:
        log.error("%s", exc)
        _emit({"error": str(exc), "exit_code": EXIT_LOAD})
        return EXIT_LOAD
    except OSError as exc:
        log.error("%s", exc)
        _emit({"error": str(exc), "exit_code": EXIT_IO})
        return EXIT_IO
    except ValueError as exc:
        # bad combinations only detectable against the data (e.g. too few samples for a frame)
        log.error("%s", exc)
        _emit({"error": str(exc), "exit_code": EXIT_CONFIG})
        return EXIT_CONFIG
    _emit(result)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
