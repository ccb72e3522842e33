"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines;
they are also echoed when output is captured.
"""

import shutil
import time

import numpy as np
import pytest

from dsrefine.dsrnet import dsrnet_forward, init_dsrnet
from dsrefine.enhance import apply_mask, enh_loss, init_estimator, oracle_mask
from dsrefine.evaluate import evaluate
from dsrefine.experiments import SWEEP_ALPHAS, DeskCorpusConfig, desk_corpus, run_ablation, run_sweep
from dsrefine.loss import error_decomposition, error_weight
from dsrefine.mixer import SNR_GRID_DB, MixSpec, load_waveforms, magnitude_triplet, measured_snr, simulate_corpus
from dsrefine.signal import Waveform, istft, stft
from dsrefine.synth import write_pools
from dsrefine.train import gradcheck


@pytest.fixture
def verdict(capsys):
    """Call with (criterion, ok, detail, seconds, budget); prints and asserts."""

    def _report(n, ok, detail, seconds, budget):
        in_time = seconds < budget
        line = f"criterion {n:2d}: {'PASS' if ok and in_time else 'FAIL'}  {detail}  ({seconds:.2f}s, budget {budget:g}s)"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
        assert in_time, line

    return _report


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# --- shared desk-scale runs (reused by criterion 10) -----------------------


@pytest.fixture(scope="module")
def snr_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("c2")
    clean, noise = write_pools(root / "pools", 50, seed=5, seconds=0.5)

    def run():
        t0 = time.perf_counter()
        rows = {snr: simulate_corpus(clean, noise, MixSpec(snr_db=snr, seed=17), root / f"snr{snr:g}") for snr in SNR_GRID_DB}
        return rows, time.perf_counter() - t0

    first, seconds = run()
    snap = {snr: _files(root / f"snr{snr:g}") for snr in SNR_GRID_DB}
    return {"root": root, "rows": first, "seconds": seconds, "snapshot": snap, "rerun": run}


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    train, test = desk_corpus(root, DeskCorpusConfig(n_train=60, n_test=20, seed=1))
    return root, train, test


@pytest.fixture(scope="module")
def ablation_run(desk):
    root, train, test = desk
    t0 = time.perf_counter()
    results = run_ablation(train, test, root / "ablation", epochs=5, seed=0)
    return results, time.perf_counter() - t0, _files(root / "ablation")


@pytest.fixture(scope="module")
def sweep_run(desk):
    root, train, test = desk
    t0 = time.perf_counter()
    rows = run_sweep(train, test, root / "sweep.csv", epochs=2, seed=0)
    return rows, time.perf_counter() - t0, (root / "sweep.csv").read_bytes()


# --- criteria ---------------------------------------------------------------


def test_c01_stft_round_trip(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = rng.uniform(-1, 1, 16000)
        y = istft(stft(Waveform(x, 16000), 512, 128), trim=True).samples
        inner = slice(512, len(x) - 512)
        worst = max(worst, np.linalg.norm(y[inner] - x[inner]) / np.linalg.norm(x[inner]))
    verdict(1, worst <= 1e-6, f"max interior relative L2 error {worst:.2e} <= 1e-6", time.perf_counter() - t0, 10)


def test_c02_snr_calibration(snr_run, verdict):
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    for snr, rows in snr_run["rows"].items():
        for row in rows:
            _, clean, scaled = load_waveforms(row)
            worst = max(worst, abs(measured_snr(clean, scaled) - snr))
            count += 1
    ok = worst <= 0.01 and count == 50 * len(SNR_GRID_DB)
    seconds = snr_run["seconds"] + time.perf_counter() - t0
    verdict(2, ok, f"{count} mixtures, max |measured - target| {worst:.2e} dB", seconds, 30)


def test_c03_masking_identity(verdict):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    ok = True
    for _ in range(100):
        Y = rng.gamma(0.6, 2.0, (40, 257))
        M = rng.uniform(0, 1, Y.shape)
        s_hat, n_hat = apply_mask(M, Y)
        ok &= bool(np.array_equal(s_hat + n_hat, Y) and np.array_equal(n_hat, Y - s_hat))
        ok &= bool(np.all(np.abs(s_hat - M * Y) <= np.spacing(Y)))
    verdict(3, ok, "S_hat + N_hat == Y bitwise for 100 random cases", time.perf_counter() - t0, 5)


def test_c04_oracle_exactness(small_corpus, verdict):
    _, rows = small_corpus
    t0 = time.perf_counter()
    worst_loss, worst_dec = 0.0, 0.0
    for row in rows:
        Y, S, N = magnitude_triplet(row, synthetic=True)
        pair = apply_mask(oracle_mask(S, N), Y)
        dec = error_decomposition(pair, S, N)
        worst_loss = max(worst_loss, enh_loss(pair.s_hat, S))
        worst_dec = max(worst_dec, float(np.abs(dec.e_s).max()), float(np.abs(dec.e_n).max()))
    ok = worst_loss == 0.0 and worst_dec == 0.0
    verdict(4, ok, f"{len(rows)} utterances, max L_enh {worst_loss!r}, max |decomposition| {worst_dec!r}", time.perf_counter() - t0, 5)


def test_c05_gradient_suite(verdict):
    t0 = time.perf_counter()
    report = {}
    for component in ("enhance", "dsrnet", "loss", "end-to-end"):
        report.update({f"{component}/{k}": v for k, v in gradcheck(component, seed=5, n_bins=4, frames=3, hidden=3, step=1e-5).items()})
    linear = max(v for k, v in report.items() if k.startswith("dsrnet/"))
    other = max(v for k, v in report.items() if not k.startswith("dsrnet/"))
    ok = linear <= 1e-6 and other <= 1e-5
    verdict(5, ok, f"{len(report)} blocks, linear max {linear:.1e} <= 1e-6, nonlinear max {other:.1e} <= 1e-5", time.perf_counter() - t0, 60)


def test_c06_zero_dsrnet_is_noop(small_corpus, verdict):
    _, rows = small_corpus
    t0 = time.perf_counter()
    zero = init_dsrnet(257, mode="zero")
    rng = np.random.default_rng(606)
    s_hat, n_hat = rng.gamma(0.6, 2.0, (2, 30, 257))
    _, refined, _ = dsrnet_forward(zero, (s_hat, n_hat))
    ok = np.array_equal(refined.s_tilde, s_hat) and np.array_equal(refined.n_tilde, n_hat)
    report = evaluate(rows, init_estimator("mlp", 257, 8, 1, seed=0), zero)
    ok &= all(r["spectral_mse_refined"] == r["spectral_mse_enhanced"] and r["si_snr_refined"] == r["si_snr_enhanced"] for r in report.rows)
    verdict(6, ok, "zero DSRNet output and eval metrics bit-identical to its input", time.perf_counter() - t0, 5)


def test_c07_lambda_law(verdict):
    rng = np.random.default_rng(707)
    t0 = time.perf_counter()
    a = rng.exponential(5.0, 1000) * (rng.uniform(size=1000) > 0.05)
    b = rng.exponential(5.0, 1000) * (rng.uniform(size=1000) > 0.05)
    delta = rng.exponential(1.0, 1000)
    ok = error_weight(3.0, 1.0) == 0.75 and error_weight(0.0, 0.0) == 0.5
    for x, y, d in zip(a, b, delta):
        lam = error_weight(x, y)
        ok &= 0.0 <= lam <= 1.0 and error_weight(x, x) == 0.5 and error_weight(x + d, y) >= lam
    verdict(7, ok, "1000 pairs: range, lambda(a,a)=0.5, lambda(3,1)=0.75, monotone in the speech error", time.perf_counter() - t0, 1)


@pytest.mark.slow
def test_c08_ablation_ordering(desk, ablation_run, verdict):
    _, train, test = desk
    results, seconds, _ = ablation_run
    by = {r["config"]: r for r in results}
    snrs = {r.snr_db for r in train} | {r.snr_db for r in test}
    a_mse, b_mse, c_mse = by["a"]["heldout_mse_enhanced"], by["b"]["heldout_mse_refined"], by["c"]["heldout_mse_refined"]
    ok = len(train) + len(test) >= 50 and snrs == set(SNR_GRID_DB) and c_mse < a_mse
    detail = f"(c) refined {c_mse:.4f} < (a) enhanced {a_mse:.4f}; (b) refined {b_mse:.4f} reported, (b){'>' if b_mse > c_mse else '<='}(c)"
    verdict(8, ok, detail, seconds, 600)


@pytest.mark.slow
def test_c09_alpha_sweep(desk, sweep_run, verdict):
    _, train, test = desk
    rows, seconds, first = sweep_run
    rerun = run_sweep(train, test, desk[0] / "sweep_again.csv", epochs=2, seed=0)
    again = (desk[0] / "sweep_again.csv").read_bytes()
    ok = [r["alpha"] for r in rows] == list(SWEEP_ALPHAS) and len(first.splitlines()) == 7 and again == first and rerun == rows
    verdict(9, ok, f"{len(rows)} rows over alpha {list(SWEEP_ALPHAS)}, identical on rerun", seconds, 600)


@pytest.mark.slow
def test_c10_determinism(desk, snr_run, ablation_run, sweep_run, verdict):
    root, train, test = desk
    t0 = time.perf_counter()
    snr_run["rerun"]()
    same_mix = all(_files(snr_run["root"] / f"snr{s:g}") == snr_run["snapshot"][s] for s in SNR_GRID_DB)
    shutil.rmtree(root / "ablation")
    run_ablation(train, test, root / "ablation", epochs=5, seed=0)
    same_abl = _files(root / "ablation") == ablation_run[2]
    run_sweep(train, test, root / "sweep.csv", epochs=2, seed=0)
    same_sweep = (root / "sweep.csv").read_bytes() == sweep_run[2]
    ok = same_mix and same_abl and same_sweep
    detail = f"manifests+wavs {same_mix}, ablation traces/reports/ckpts {same_abl}, sweep table {same_sweep}"
    verdict(10, ok, detail, time.perf_counter() - t0, 1200)
