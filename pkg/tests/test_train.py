import csv
import math

import numpy as np
import pytest

from dsrefine import checkpoint
from dsrefine.dsrnet import init_dsrnet
from dsrefine.enhance import apply_mask, enh_loss, estimate_mask, init_estimator, oracle_mask
from dsrefine.loss import JointLossConfig
from dsrefine.mixer import MixSpec, simulate_corpus
from dsrefine.synth import write_pools
from dsrefine.train import (
    Adam,
    TrainConfig,
    TrainingDiverged,
    clip_global_norm,
    gradcheck,
    iter_batches,
    load_corpus,
    lr_schedule,
    numeric_grad,
    pipeline_step,
    rel_error,
    sweep_alpha,
    train_joint,
    train_se,
)


@pytest.fixture(scope="module")
def corpus20(tmp_path_factory):
    root = tmp_path_factory.mktemp("c20")
    clean, noise = write_pools(root, n_clean=20, seed=5, seconds=0.5)
    rows = simulate_corpus(clean, noise, MixSpec(snr_mode="randomized", seed=3), root / "mix")
    return load_corpus(rows, synthetic=True)


def corpus_enh_loss(se, corpus):
    return float(np.mean([enh_loss(apply_mask(estimate_mask(se, u.Y)[0], u.Y).s_hat, u.S) for u in corpus]))


def test_lr_schedule():
    cfg = TrainConfig(learning_rate=1e-3, warmup_steps=300)
    assert lr_schedule(300, cfg) == 1e-3
    assert lr_schedule(150, cfg) == pytest.approx(5e-4, rel=1e-15)
    assert lr_schedule(1200, cfg) == pytest.approx(5e-4, rel=1e-15)
    assert max(lr_schedule(s, cfg) for s in range(1, 2000)) == lr_schedule(300, cfg)
    with pytest.raises(ValueError):
        lr_schedule(0, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(regime="thawed")


def test_adam_zero_gradient_is_noop(rng):
    w = {"a": rng.standard_normal(5)}
    before = w["a"].copy()
    opt = Adam()
    for _ in range(3):
        opt.step(w, {"a": np.zeros(5)}, 0.1)
    assert np.array_equal(w["a"], before)


def test_adam_first_step_is_signed_lr(rng):
    w = {"a": np.zeros(4)}
    Adam().step(w, {"a": np.array([2.0, -3.0, 0.5, -1e-3])}, 0.01)
    assert np.allclose(w["a"], [-0.01, 0.01, -0.01, 0.01], rtol=1e-4)


def test_clip_global_norm():
    g = [{"a": np.array([3.0, 0.0])}, {"b": np.array([4.0])}]
    norm = clip_global_norm(g, 1.0)
    assert norm == 5.0
    assert np.allclose(np.concatenate([g[0]["a"], g[1]["b"]]), [0.6, 0.0, 0.8])


def test_batches_stay_inside_one_utterance(corpus20):
    rng = np.random.default_rng(0)
    seen = 0
    for Y, S, N in iter_batches(corpus20[:3], 16, rng):
        assert Y.shape[0] <= 16
        assert any(np.shares_memory(Y, u.Y) for u in corpus20[:3])
        seen += Y.shape[0]
    assert seen == sum(u.Y.shape[0] for u in corpus20[:3])


def test_train_se_reduces_loss(corpus20):
    cfg = TrainConfig(variant="mlp", hidden=16, layers=1, epochs=100, max_steps=200, batch_frames=32, warmup_steps=50, learning_rate=3e-3)
    se0 = init_estimator("mlp", 257, 16, 1, seed=cfg.seed)
    initial = corpus_enh_loss(se0, corpus20)
    report = train_se(corpus20, cfg, se=se0)
    assert len(report.trace) == 200
    final = corpus_enh_loss(report.se, corpus20)
    assert final < 0.5 * initial
    # the oracle mask reaches zero on a synthetic corpus, training lands in between
    oracle = np.mean([enh_loss(apply_mask(oracle_mask(u.S, u.N), u.Y).s_hat, u.S) for u in corpus20])
    assert oracle < 1e-25 < final < initial


def test_zero_epochs_is_noop(corpus20):
    se = init_estimator("mlp", 257, 8, 1, seed=0)
    report = train_se(corpus20, TrainConfig(epochs=0, hidden=8, layers=1), se=se)
    assert report.trace == []
    assert report.se.checksum() == se.checksum()


def test_train_se_deterministic(corpus20):
    cfg = TrainConfig(hidden=8, layers=1, epochs=1, max_steps=30)
    a, b = train_se(corpus20, cfg), train_se(corpus20, cfg)
    assert a.trace == b.trace
    assert a.se.checksum() == b.se.checksum()


def test_frozen_regime_keeps_estimator(corpus20, tmp_path):
    cfg = TrainConfig(hidden=8, layers=1, epochs=1, max_steps=20, regime="frozen")
    se = init_estimator("mlp", 257, 8, 1, seed=4)
    report = train_joint(corpus20, cfg, JointLossConfig(), se=se, ckpt_dir=tmp_path)
    assert report.se.checksum() == se.checksum()
    assert checkpoint.load(tmp_path / "se.ckpt")[0].checksum() == se.checksum()
    assert report.dsrnet.checksum() != init_dsrnet(257, cfg.seed).checksum()
    assert all(0 <= r["lambda"] <= 1 for r in report.trace)


def test_beta_zero_leaves_dsrnet_untouched(corpus20):
    cfg = TrainConfig(hidden=8, layers=1, epochs=1, max_steps=20)
    dsr = init_dsrnet(257, seed=0)
    report = train_joint(corpus20, cfg, JointLossConfig(beta=0.0), dsr=dsr)
    assert report.dsrnet.checksum() == dsr.checksum()
    se0 = init_estimator("mlp", 257, 8, 1, seed=0)
    assert report.se.checksum() != se0.checksum()


def test_beta_zero_gradients_are_exactly_zero(corpus20):
    u = corpus20[0]
    se = init_estimator("mlp", 257, 8, 1, seed=0)
    dsr = init_dsrnet(257, seed=0, mode="random")
    _, _, g = pipeline_step(se, dsr, u.Y[:10], u.S[:10], u.N[:10], JointLossConfig(beta=0.0))
    assert all(not np.any(v) for v in g.values())
    _, _, g = pipeline_step(se, dsr, u.Y[:10], u.S[:10], u.N[:10], JointLossConfig(beta=0.0, downstream_mode="feature_proxy"))
    assert any(np.any(v) for v in g.values())


def test_end_to_end_gradient_through_dsrnet(rng):
    F, T = 5, 4
    Y = rng.uniform(0.2, 2, (T, F))
    frac = rng.uniform(0.2, 0.8, (T, F))
    S, N = frac * Y, (1 - frac) * Y
    cfg = JointLossConfig(lambda_mode="fixed", lambda_value=0.5)
    se = init_estimator("recurrent", F, 3, 2, seed=1)
    dsr = init_dsrnet(F, seed=1, mode="random")
    _, g_se, _ = pipeline_step(se, dsr, Y, S, N, cfg)
    f = lambda: pipeline_step(se, dsr, Y, S, N, cfg, se_grads=False)[0]["l_total"]
    for k in ("l0.Wx", "l1.Wh", "out.W"):
        assert rel_error(g_se[k], numeric_grad(f, se.arrays[k])) <= 1e-5, k


def test_divergence_is_reported(corpus20):
    se = init_estimator("mlp", 257, 8, 1, seed=0)
    cfg = TrainConfig(hidden=8, layers=1, epochs=1, optimizer="sgd", learning_rate=1e200, warmup_steps=1, clip_norm=0)
    with pytest.raises(TrainingDiverged, match="at step 2"):
        train_joint(corpus20, cfg, JointLossConfig(), se=se)


def test_trace_csv(corpus20, tmp_path):
    cfg = TrainConfig(hidden=8, layers=1, epochs=1, max_steps=5)
    train_joint(corpus20, cfg, ckpt_dir=tmp_path)
    with open(tmp_path / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "l_enh", "l_refine", "lambda", "e_s_tilde", "e_n_tilde", "l_total"]
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4, 5]


def test_sweep_alpha_structure(corpus20, tmp_path):
    cfg = TrainConfig(hidden=8, layers=1, epochs=1, max_steps=5, use_dsrnet=False)
    lc = JointLossConfig(downstream_mode="feature_proxy")
    rows = sweep_alpha([300], corpus20[:4], cfg, lc, out_csv=tmp_path / "one.csv")
    assert len(rows) == 1 and rows[0]["alpha"] == 300.0
    again = sweep_alpha([300], corpus20[:4], cfg, lc)
    assert rows == again
    with pytest.raises(ValueError):
        sweep_alpha([], corpus20[:4], cfg, lc)


@pytest.mark.parametrize(
    "component,limit", [("dsrnet", 1e-6), ("loss", 1e-6), ("enhance", 1e-5), ("end-to-end", 1e-5)]
)
def test_gradcheck_report(component, limit):
    report = gradcheck(component, seed=2)
    assert report and max(report.values()) <= limit


def test_gradcheck_unknown_component():
    with pytest.raises(ValueError):
        gradcheck("everything")


def test_checkpoint_round_trip(tmp_path, rng):
    se = init_estimator("recurrent", 7, 3, 2, seed=1)
    dsr = init_dsrnet(7, seed=2, mode="random", shared_inner=True)
    checkpoint.save(tmp_path / "se.ckpt", se, seed=1, step=9)
    checkpoint.save(tmp_path / "d.ckpt", dsr)
    se2, header = checkpoint.load(tmp_path / "se.ckpt")
    assert header["variant"] == "recurrent" and header["step"] == 9 and header["format_version"] == 1
    assert se2.checksum() == se.checksum() and se2.hidden == se.hidden
    dsr2, header = checkpoint.load(tmp_path / "d.ckpt")
    assert header["variant"] == "dsrnet" and dsr2.shared_inner
    assert dsr2.checksum() == dsr.checksum()
    raw = (tmp_path / "d.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="truncated"):
        checkpoint.load(tmp_path / "bad.ckpt")
    # payload is little-endian float64 right after the header line
    body = raw[raw.index(b"\n") + 1:]
    assert len(body) == 8 * dsr.n_params()
