"""PA modeling, DPD learning through a frozen PA model, evaluation and budget sweeps."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import backward, constant, mse_loss
from .metrics import ChannelPlan, MetricReport, PsdConfig, acpr, evm, nmse, papr, target_gain
from .models import (BudgetError, SequenceModel, build_model, dumps_checkpoint, gmp_fit,
                     loads_checkpoint, search_config_for_budget)
from .models.gmp import GmpConfig
from .optim import AdamWState, PlateauScheduler, adamw_step, scheduler_update
from .signal import DatasetSplit, IqSequence, frame_sequence
from .waveform import OfdmReference

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    frame_len: int = 50
    stride: int = 1
    initial_lr: float = 1e-3
    seed: int = 0
    # "auto" -> mean output/input magnitude ratio on the training split
    target_gain_mode: str | float = "auto"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_factor: float = 0.5
    lr_patience: int = 5
    min_lr: float = 1e-6
    # "identity": DPD models that can (DGRU via its skip path) start as an exact pass-through
    dpd_init: str = "identity"

    def __post_init__(self):
        for k in ("epochs", "batch_size", "frame_len", "stride"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if isinstance(self.target_gain_mode, str):
            if self.target_gain_mode != "auto":
                raise ValueError("target_gain_mode must be 'auto' or a positive number")
        elif not float(self.target_gain_mode) > 0:
            raise ValueError("fixed target gain must be positive")
        if self.dpd_init not in ("identity", "random"):
            raise ValueError("dpd_init must be 'identity' or 'random'")


@dataclass
class TrainHistory:
    phase: str
    records: list[dict] = field(default_factory=list)

    def column(self, key: str) -> list[float]:
        return [r[key] for r in self.records]


@dataclass
class GoldCheckpoint:
    model: SequenceModel
    metric_name: str
    metric_value: float
    epoch: int
    gain: float | None = None

    def dumps(self) -> str:
        sel = {"metric": self.metric_name, "value": self.metric_value, "epoch": self.epoch}
        if self.gain is not None:
            sel["gain"] = self.gain
        return dumps_checkpoint(self.model, {"selection": sel})

    @classmethod
    def loads(cls, text: str) -> "GoldCheckpoint":
        model, doc = loads_checkpoint(text)
        sel = doc.get("selection", {})
        return cls(model, sel.get("metric", ""), float(sel.get("value", math.nan)),
                   int(sel.get("epoch", -1)), sel.get("gain"))


def _as_model(m) -> SequenceModel | None:
    if m is None:
        return None
    return m.model if isinstance(m, GoldCheckpoint) else m


def _clone(model: SequenceModel) -> SequenceModel:
    return loads_checkpoint(dumps_checkpoint(model))[0]


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    for b in range(0, n, batch_size):
        yield perm[b:b + batch_size]


def _check_loss(loss: float, initial: float | None, where: str) -> None:
    if not math.isfinite(loss) or (initial is not None and initial > 0
                                   and loss > DIVERGENCE_FACTOR * initial):
        raise DivergenceError(f"training diverged during {where}: loss={loss!r}, initial={initial!r}")


def _optimizer(t: TrainConfig) -> tuple[AdamWState, PlateauScheduler]:
    return (AdamWState(lr=t.initial_lr, beta1=t.beta1, beta2=t.beta2, eps=t.eps, weight_decay=t.weight_decay),
            PlateauScheduler(factor=t.lr_factor, patience=t.lr_patience, min_lr=t.min_lr))


def train_pa(split: DatasetSplit, model_cfg: dict, t: TrainConfig) -> tuple[GoldCheckpoint, TrainHistory]:
    """Fit a PA behavioral model; gold = epoch with the lowest validation NMSE.

    ``model_cfg`` is ``{"family": ..., "hyperparams": {...}}``.
    """
    family = model_cfg["family"]
    hp = model_cfg.get("hyperparams", {})
    x_tr, y_tr = split.train
    x_val, y_val = split.validation
    history = TrainHistory("pa")

    if family == "gmp":
        model = gmp_fit(x_tr, y_tr, GmpConfig.from_dict({**GmpConfig().to_dict(), **hp}))
        model.seed = t.seed
        val_db = nmse(model.predict_seq(x_val), y_val)[1]
        train_db = nmse(model.predict_seq(x_tr), y_tr)[1]
        history.records.append({"epoch": 0, "loss": 10 ** (train_db / 10), "val_nmse_db": val_db, "lr": 0.0})
        return GoldCheckpoint(model, "val_nmse_db", val_db, 0), history

    model = build_model(family, hp, seed=t.seed)
    frames = frame_sequence(x_tr, y_tr, t.frame_len, t.stride)
    X, Y = frames.inputs, frames.targets
    opt, sched = _optimizer(t)
    best, initial = None, None
    for epoch in range(t.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(X), t.batch_size, t.seed, epoch):
            model.params.zero_grad()
            loss = mse_loss(model(constant(X[idx])), Y[idx])
            lv = float(loss.value)
            _check_loss(lv, initial, f"PA epoch {epoch}")
            initial = lv if initial is None else initial
            backward(loss)
            adamw_step(model.params, opt)
            total += lv * len(idx)
            count += len(idx)
        val_db = nmse(model.predict_seq(x_val), y_val)[1]
        history.records.append({"epoch": epoch, "loss": total / count, "val_nmse_db": val_db, "lr": opt.lr})
        log.info("PA epoch %d loss %.3e val NMSE %.2f dB lr %.1e", epoch, total / count, val_db, opt.lr)
        if best is None or val_db < best[0]:
            best = (val_db, epoch, model.params.snapshot())
        opt.lr = scheduler_update(sched, val_db, opt.lr)
    model.params.load(best[2])
    return GoldCheckpoint(model, "val_nmse_db", best[0], best[1]), history


def resolve_gain(split: DatasetSplit, t: TrainConfig) -> float:
    if t.target_gain_mode == "auto":
        return target_gain(*split.train)
    return float(t.target_gain_mode)


def validation_reference(reference: OfdmReference | None, split: DatasetSplit, part: str) -> OfdmReference | None:
    if reference is None:
        return None
    lo, hi = {"train": split.bounds[0:2], "val": split.bounds[1:3], "test": split.bounds[2:4]}[part]
    try:
        return reference.segment(lo, hi - lo)
    except ValueError:
        return None


def cascade_metrics(dpd: SequenceModel | None, pa: SequenceModel, x: IqSequence, gain: float,
                    reference: OfdmReference | None, plan: ChannelPlan, psd_cfg: PsdConfig) -> MetricReport:
    u = x if dpd is None else dpd.predict_seq(x)
    y_hat = pa.predict_seq(u)
    left, right = acpr(y_hat, plan, psd_cfg)
    e = evm(y_hat, reference, gain) if reference is not None else math.nan
    return MetricReport(nmse_db=nmse(y_hat, x.scaled(gain))[1], acpr_left_dbc=left, acpr_right_dbc=right,
                        evm_db=e, papr_db=papr(u), gain=gain)


def train_dpd(split: DatasetSplit, pa_gold, dpd_cfg: dict, t: TrainConfig,
              reference: OfdmReference | None = None, plan: ChannelPlan | None = None,
              psd_cfg: PsdConfig | None = None) -> tuple[GoldCheckpoint, TrainHistory]:
    """Learn a DPD by BPTT through the frozen PA model; gold = lowest mean validation SIM-ACPR.

    ``reference`` describes the whole (unsplit) stimulus; when given,
    validation SIM-EVM is computed on the OFDM symbols inside the
    validation partition.
    """
    plan = plan or ChannelPlan()
    psd_cfg = psd_cfg or PsdConfig()
    pa = _clone(_as_model(pa_gold))
    if not pa.input_differentiable:
        raise ValueError(f"a {pa.family} PA model cannot pass gradients back to the DPD")
    pa.freeze()
    pa_digest = pa.params.digest()
    gain = resolve_gain(split, t)

    x_tr = split.train[0]
    x_val = split.validation[0]
    ref_val = validation_reference(reference, split, "val")
    dpd = build_model(dpd_cfg["family"], dpd_cfg.get("hyperparams", {}), seed=t.seed)
    if not dpd.trainable_by_gradient:
        raise ValueError(f"{dpd.family} cannot be trained as a DPD")
    if t.dpd_init == "identity" and hasattr(dpd, "init_identity"):
        dpd.init_identity()

    frames = frame_sequence(x_tr, x_tr, t.frame_len, t.stride)
    X = frames.inputs
    target = X * gain
    opt, sched = _optimizer(t)
    history = TrainHistory("dpd")
    best, initial = None, None
    for epoch in range(t.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(X), t.batch_size, t.seed, epoch):
            dpd.params.zero_grad()
            pa.params.zero_grad()
            loss = mse_loss(pa(dpd(constant(X[idx]))), target[idx])
            lv = float(loss.value)
            _check_loss(lv, initial, f"DPD epoch {epoch}")
            initial = lv if initial is None else initial
            backward(loss)
            adamw_step(dpd.params, opt)
            total += lv * len(idx)
            count += len(idx)
        rep = cascade_metrics(dpd, pa, x_val, gain, ref_val, plan, psd_cfg)
        record = {"epoch": epoch, "loss": total / count, "val_acpr_left_dbc": rep.acpr_left_dbc,
                  "val_acpr_right_dbc": rep.acpr_right_dbc, "val_evm_db": rep.evm_db, "lr": opt.lr}
        history.records.append(record)
        log.info("DPD epoch %d loss %.3e val ACPR %.2f/%.2f dBc EVM %.2f dB", epoch, record["loss"],
                 rep.acpr_left_dbc, rep.acpr_right_dbc, rep.evm_db)
        score = rep.acpr_mean_dbc
        if best is None or score < best[0]:
            best = (score, epoch, dpd.params.snapshot())
        opt.lr = scheduler_update(sched, score, opt.lr)
    if pa.params.digest() != pa_digest:
        raise RuntimeError("frozen PA parameters changed during DPD training")
    dpd.params.load(best[2])
    return GoldCheckpoint(dpd, "val_acpr_mean_dbc", best[0], best[1], gain), history


def predistort(dpd, x: IqSequence) -> IqSequence:
    return _as_model(dpd).predict_seq(x)


def sim_eval(dpd, pa, x: IqSequence, ref: OfdmReference | None, plan: ChannelPlan | None = None,
             gain: float = 1.0, psd_cfg: PsdConfig | None = None) -> MetricReport:
    """Metrics of ``pa(dpd(x))``; with ``dpd=None`` the PA model is driven by ``x`` directly."""
    return cascade_metrics(_as_model(dpd), _as_model(pa), x, gain, ref,
                           plan or ChannelPlan(), psd_cfg or PsdConfig())


@dataclass
class SweepRow:
    family: str
    params: int
    sim_acpr_l_dbc: float
    sim_acpr_r_dbc: float
    sim_evm_db: float
    error: str = ""


def _sweep_cell(args) -> SweepRow:
    family, budget, split, pa_text, t, reference, plan, psd_cfg, tol = args
    try:
        hp = search_config_for_budget(family, budget, tol)
        probe = build_model(family, hp)
        gold, _ = train_dpd(split, GoldCheckpoint.loads(pa_text), {"family": family, "hyperparams": hp}, t,
                            reference, plan, psd_cfg)
        rep = sim_eval(gold, GoldCheckpoint.loads(pa_text), split.test[0],
                       validation_reference(reference, split, "test"), plan, gold.gain, psd_cfg)
        return SweepRow(family, probe.count_params(), rep.acpr_left_dbc, rep.acpr_right_dbc, rep.evm_db)
    except (BudgetError, DivergenceError, ValueError) as exc:
        log.warning("sweep cell %s/%d failed: %s", family, budget, exc)
        return SweepRow(family, budget, math.nan, math.nan, math.nan, str(exc))


def sweep_budgets(families: list[str], budgets: list[int], split: DatasetSplit, pa_gold, t: TrainConfig,
                  reference: OfdmReference | None = None, plan: ChannelPlan | None = None,
                  psd_cfg: PsdConfig | None = None, tolerance: float = 0.05, jobs: int = 1) -> list[SweepRow]:
    """Train one budget-matched DPD per (family, budget) against the same PA model.

    Cells that fail keep a row with NaN metrics; rows are sorted by family then size.
    """
    pa_text = pa_gold.dumps() if isinstance(pa_gold, GoldCheckpoint) else dumps_checkpoint(pa_gold)
    cells = [(f, b, split, pa_text, t, reference, plan or ChannelPlan(), psd_cfg or PsdConfig(), tolerance)
             for f in families for b in budgets]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    return sorted(rows, key=lambda r: (r.family, r.params))
