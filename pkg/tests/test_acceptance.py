"""Acceptance suite: one recorded PASS/FAIL line per criterion (see the terminal summary).

Criteria 4 and 5 train on the full default dataset and take about thirteen
minutes together; deselect them with ``-m "not slow"``.
"""
import math
import time

import numpy as np
import pytest

from dpd_forge.cli import run
from dpd_forge.metrics import ChannelPlan, PsdConfig, acpr, evm, nmse, papr, target_gain
from dpd_forge.models import (DgruModel, build_model, gmp_budget_terms, gmp_fit, gradient_check,
                              search_config_for_budget)
from dpd_forge.pipeline import TrainConfig, sim_eval, train_dpd, train_pa, validation_reference
from dpd_forge.signal import IqSequence, frame_sequence, split_dataset, split_lengths
from dpd_forge.waveform import OfdmConfig, default_synth_pa, generate_ofdm, generate_stimulus, synth_pa_forward

FS = 800e6
E2E_SAMPLES = 38400
E2E_PA_EPOCHS = 30
E2E_DPD_EPOCHS = 75
E2E_BUDGET_S = 15 * 60


def seq(z):
    return IqSequence.from_complex(np.asarray(z, dtype=complex), FS)


def linear_pa(gain, hidden_size=2):
    m = DgruModel({"hidden_size": hidden_size})
    for name in m.params.names():
        m.params[name].value = np.zeros_like(m.params[name].value)
    w = np.zeros((2, hidden_size + 6))
    w[0, hidden_size] = w[1, hidden_size + 1] = gain
    m.params["out.weight"].value = w
    return m


# --- 1. gradient correctness ---------------------------------------------------

def test_c1_gradient_correctness(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, fewest, bad = 0.0, math.inf, []
    for family in ("gru", "lstm", "dgru"):
        for h in range(2, 9):
            model = build_model(family, {"hidden_size": h}, seed=h)
            frame = rng.normal(size=(2, 10, 2)) * 0.5
            rep = gradient_check(model, frame, tolerance=1e-4, step=1e-5, max_samples=60, seed=h)
            worst = max(worst, rep.worst_rel_error)
            # models with fewer than 50 scalars are checked exhaustively
            fewest = min(fewest, rep.checked / min(50, model.count_params()))
            if not rep.passed:
                bad.append(f"{family}/h={h}")
    elapsed = time.perf_counter() - t0
    ok = not bad and fewest >= 1 and elapsed < 60
    report_criterion(1, ok, f"worst rel err {worst:.2e} (tol 1e-4) over 21 models, {elapsed:.1f} s (< 60 s)"
                            + (f", failing: {bad}" if bad else ""))
    assert ok


# --- 2. freeze invariant -------------------------------------------------------

def test_c2_freeze_invariant(report_criterion):
    x, ref = generate_stimulus(3000)
    split = split_dataset(x, synth_pa_forward(default_synth_pa(), x))
    t = TrainConfig(epochs=2, frame_len=10, stride=5)
    pa_gold, _ = train_pa(split, {"family": "dgru", "hyperparams": {"hidden_size": 3}}, t)
    before = pa_gold.dumps()
    for family in ("dgru", "gru", "lstm"):
        train_dpd(split, pa_gold, {"family": family, "hyperparams": {"hidden_size": 3}}, t, reference=ref)
    ok = pa_gold.dumps() == before
    report_criterion(2, ok, "PA checkpoint bytes identical after three train_dpd runs")
    assert ok


# --- 3. metric oracles -----------------------------------------------------------

def _dft_band_ratios_db(z, bands):
    n = len(z)
    k = np.arange(n)
    spec = np.empty(n, dtype=complex)
    for start in range(0, n, 256):
        spec[start:start + 256] = np.exp(-2j * np.pi * k[start:start + 256, None] * k[None, :] / n) @ z
    f = np.fft.fftfreq(n, d=1 / FS)
    p = np.abs(spec) ** 2
    power = {name: np.sum(p[(f >= lo) & (f < hi)]) for name, (lo, hi) in bands.items()}
    return {name: 10 * np.log10(v / power["main"]) for name, v in power.items()}


def test_c3_metric_oracles(report_criterion):
    rng = np.random.default_rng(0)
    errs = []
    y = seq(rng.normal(size=64) + 1j * rng.normal(size=64))
    lin, db = nmse(y, y)
    errs += [abs(lin), abs(db + 150.0)]
    lin, db = nmse(y.scaled(2.0), y)
    errs += [abs(lin - 1.0), abs(10 ** (db / 10) - 1.0)]

    x, ref = generate_ofdm(OfdmConfig(num_symbols=2, seed=4))
    g = 1.7
    errs.append(abs(evm(x.scaled(g), ref, g) + 150.0))
    errs.append(abs(10 ** (evm(x.scaled(g * 1.1), ref, g) / 10) - 0.01))

    xs = seq(rng.normal(size=16) + 1j * rng.normal(size=16))
    errs.append(abs(target_gain(xs, xs.scaled(3.0)) - 3.0))
    errs.append(abs(target_gain(seq([1.0, 2.0j]), seq([2.0, -6.0])) - 2.5))
    errs.append(abs(target_gain(xs, xs) - 1.0))
    worst_trivial = max(errs)

    plan = ChannelPlan()
    worst_acpr = 0.0
    for s in range(10):
        r = np.random.default_rng(100 + s)
        n = 2048
        f = np.fft.fftfreq(n, d=1 / FS)
        main = np.abs(f) < 95e6
        adj = (np.abs(f) > 115e6) & (np.abs(f) < 285e6)
        spec = np.zeros(n, dtype=complex)
        spec[main] = r.normal(size=main.sum()) + 1j * r.normal(size=main.sum())
        spec[adj] = 10 ** r.uniform(-2, -0.5) * (r.normal(size=adj.sum()) + 1j * r.normal(size=adj.sum()))
        z = np.fft.ifft(spec)
        left, right = acpr(seq(z), plan, PsdConfig(1024, 512, "hann"))
        oracle = _dft_band_ratios_db(z, plan.bands())
        worst_acpr = max(worst_acpr, abs(left - oracle["left"]), abs(right - oracle["right"]))
    ok = worst_trivial <= 1e-12 and worst_acpr <= 0.5
    report_criterion(3, ok, f"trivial examples max linear err {worst_trivial:.1e} (<= 1e-12); "
                            f"ACPR vs direct DFT max {worst_acpr:.3f} dB over 10 signals (<= 0.5)")
    assert ok


# --- 4 and 5. desk-scale experiments on the default synthetic PA ---------------------

@pytest.fixture(scope="module")
def e2e():
    t0 = time.perf_counter()
    x, ref = generate_stimulus(E2E_SAMPLES)
    pa = default_synth_pa()
    split = split_dataset(x, synth_pa_forward(pa, x))
    pa_gold, _ = train_pa(split, {"family": "dgru", "hyperparams": {"hidden_size": 9}},
                          TrainConfig(epochs=E2E_PA_EPOCHS))
    return {"split": split, "ref": ref, "pa_gold": pa_gold, "pa_seconds": time.perf_counter() - t0}


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="ACPR gain stays below 8 dB within the 15 min budget; see the decisions ledger")
def test_c4_end_to_end_linearization(e2e, report_criterion):
    split, ref, pa_gold = e2e["split"], e2e["ref"], e2e["pa_gold"]
    t0 = time.perf_counter()
    dpd_gold, _ = train_dpd(split, pa_gold, {"family": "dgru", "hyperparams": {"hidden_size": 9}},
                            TrainConfig(epochs=E2E_DPD_EPOCHS), reference=ref)
    elapsed = e2e["pa_seconds"] + time.perf_counter() - t0
    x_test = split.test[0]
    rt = validation_reference(ref, split, "test")
    base = sim_eval(None, pa_gold, x_test, rt, gain=dpd_gold.gain)
    lin = sim_eval(dpd_gold, pa_gold, x_test, rt, gain=dpd_gold.gain)
    d_acpr = base.acpr_mean_dbc - lin.acpr_mean_dbc
    d_evm = base.evm_db - lin.evm_db
    ok = d_acpr >= 8.0 and d_evm >= 5.0 and elapsed < E2E_BUDGET_S
    report_criterion(4, ok, f"SIM-ACPR {base.acpr_mean_dbc:.2f} -> {lin.acpr_mean_dbc:.2f} dBc "
                            f"(gain {d_acpr:.2f} dB, need >= 8); SIM-EVM {base.evm_db:.2f} -> {lin.evm_db:.2f} dB "
                            f"(gain {d_evm:.2f} dB, need >= 5); {dpd_gold.model.count_params()} params, "
                            f"{elapsed / 60:.1f} min (< 15); PAPR {papr(x_test):.2f} -> {lin.papr_db:.2f} dB")
    assert ok


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="a budget-matched GMP fits the memory-polynomial PA better; see the ledger")
def test_c5_dgru_beats_budget_matched_gmp(e2e, report_criterion):
    split, pa_gold = e2e["split"], e2e["pa_gold"]
    x_te, y_te = split.test
    dgru_db = nmse(pa_gold.model.predict_seq(x_te), y_te)[1]
    budget = pa_gold.model.count_params()
    gmp = gmp_fit(*split.train, gmp_budget_terms(budget // 2))
    gmp_db = nmse(gmp.predict_seq(x_te), y_te)[1]
    margin = gmp_db - dgru_db
    ok = margin >= 5.0
    report_criterion(5, ok, f"test NMSE DGRU {dgru_db:.2f} dB ({budget} params) vs GMP {gmp_db:.2f} dB "
                            f"({gmp.count_params()} params): margin {margin:.2f} dB (need >= 5)")
    assert ok


# --- 6. budget search ------------------------------------------------------------

def test_c6_budget_search(report_criterion):
    found = []
    for family, target in (("gmp", 495), ("gru", 488), ("lstm", 488), ("dgru", 486)):
        hp = search_config_for_budget(family, target)
        n = build_model(family, hp).count_params()
        found.append((family, target, n, abs(n - target) <= 0.05 * target))
    ok = all(f[3] for f in found)
    report_criterion(6, ok, ", ".join(f"{f} {t}->{n}" for f, t, n, _ in found) + " (within 5%)")
    assert ok


# --- 7. framing and split arithmetic ---------------------------------------------

def test_c7_framing_and_split(report_criterion):
    rng = np.random.default_rng(0)
    x = IqSequence(rng.normal(size=(38400, 2)))
    frames = frame_sequence(x, x, 50, 1)
    lengths = split_lengths(38400, (0.6, 0.2, 0.2))
    split = split_dataset(x, x)
    parts = tuple(len(p[0]) for p in (split.train, split.validation, split.test))
    ok = len(frames) == 38351 and lengths == (23040, 7680, 7680) == parts
    report_criterion(7, ok, f"{len(frames)} frames (38351); split {parts} (23040/7680/7680)")
    assert ok


# --- 8. determinism ----------------------------------------------------------------

def test_c8_determinism(tmp_path, report_criterion):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"waveform": {"n_samples": 14400}, '
                   '"model": {"pa": {"family": "dgru", "hyperparams": {"hidden_size": 3}}, '
                   '"dpd": {"family": "dgru", "hyperparams": {"hidden_size": 3}}}, '
                   '"train": {"epochs": 2, "frame_len": 20, "stride": 10}}')
    for tag in ("a", "b"):
        root = tmp_path / tag
        steps = [["datagen", "--out", root / "data"],
                 ["train-pa", "--data", root / "data", "--out", root / "pa"],
                 ["train-dpd", "--data", root / "data", "--pa-ckpt", root / "pa" / "gold_pa.json", "--out", root / "dpd"],
                 ["eval", "--data", root / "data", "--pa-ckpt", root / "dpd" / "gold_pa.json",
                  "--dpd-ckpt", root / "dpd" / "gold_dpd.json", "--out", root / "dpd"]]
        for step in steps:
            assert run([str(a) for a in step] + ["--config", str(cfg), "--seed", "5"]) == 0
    files = ["data/train_input.csv", "data/test_output.csv", "data/reference.csv", "pa/gold_pa.json",
             "dpd/gold_dpd.json", "dpd/report.json", "dpd/predistorted.csv"]
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    ok = all(same)
    report_criterion(8, ok, f"{sum(same)}/{len(files)} artifacts byte-identical across two seeded runs")
    assert ok


# --- 9. identity capability --------------------------------------------------------

def _identity_error_db(dpd_init, epochs):
    g = 1.3
    x, ref = generate_stimulus(4000)
    split = split_dataset(x, x.scaled(g))
    t = TrainConfig(epochs=epochs, target_gain_mode=g, dpd_init=dpd_init)
    gold, _ = train_dpd(split, linear_pa(g), {"family": "dgru", "hyperparams": {"hidden_size": 9}}, t)
    x_te = split.test[0]
    return nmse(gold.model.predict_seq(x_te), x_te)[1]


def test_c9_identity_capability(report_criterion):
    err_db = _identity_error_db("identity", 30)
    ok = err_db <= -30.0
    report_criterion(9, ok, f"||dpd(x)-x||^2/||x||^2 = {err_db:.2f} dB (<= -30) with the default identity start")
    assert ok


@pytest.mark.slow
def test_c9_identity_from_random_start(report_criterion):
    # informational: the same check without the identity start
    err_db = _identity_error_db("random", 30)
    report_criterion(9, None, f"random start reaches {err_db:.2f} dB (-30 would pass)", tag="(random start)")
    assert math.isfinite(err_db)
