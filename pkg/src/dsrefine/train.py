"""Optimizers, batching, training regimes and the finite-difference gradient checker."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import checkpoint
from .dsrnet import DsrnetParams, dsrnet_backward, dsrnet_forward, init_dsrnet
from .enhance import (
    MaskEstimatorParams,
    NonFiniteActivation,
    apply_mask,
    enh_loss,
    enh_loss_backward,
    estimate_mask,
    init_estimator,
    mask_estimator_backward,
)
from .loss import JointLossConfig, NonFiniteLoss, feature_proxy_loss, joint_loss, refine_loss
from .mixer import Manifest, magnitude_triplet
from .signal import MelConfig

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "l_enh", "l_refine", "lambda", "e_s_tilde", "e_n_tilde", "l_total")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 300
    epochs: int = 10
    batch_frames: int = 64
    seed: int = 0
    regime: str = "joint"  # joint | frozen
    optimizer: str = "adam"  # adam | sgd
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    variant: str = "mlp"
    hidden: int = 64
    layers: int = 2
    use_dsrnet: bool = True
    dsrnet_init: str = "identity"
    shared_inner: bool = False
    synthetic: bool = True
    max_steps: int | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.batch_frames < 1:
            raise ValueError("batch_frames must be >= 1")
        if self.regime not in ("joint", "frozen"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    trace: list = field(default_factory=list)
    checkpoint_path: str | None = None
    seconds: float = 0.0
    se: MaskEstimatorParams | None = None
    dsrnet: DsrnetParams | None = None

    def write_trace(self, path):
        write_trace(path, self.trace)


def write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else ("" if row[k] is None else row[k]) for k in TRACE_COLUMNS})


# ---------------------------------------------------------------------------
# data


class Utterance(NamedTuple):
    utt_id: str
    snr_db: float
    Y: np.ndarray
    S: np.ndarray
    N: np.ndarray


def load_corpus(rows, synthetic: bool = True) -> list[Utterance]:
    """Accept manifest rows (or already loaded utterances) and return utterances."""
    out = []
    for row in rows:
        if isinstance(row, Utterance):
            out.append(row)
            continue
        Y, S, N = magnitude_triplet(row, synthetic=synthetic)
        out.append(Utterance(row.utt_id, row.snr_db, Y.frames, S.frames, N.frames))
    return out


def iter_batches(corpus: list[Utterance], batch_frames: int, rng: np.random.Generator):
    """Contiguous frame chunks from one utterance at a time, in shuffled order."""
    chunks = []
    for u, utt in enumerate(corpus):
        for start in range(0, utt.Y.shape[0], batch_frames):
            chunks.append((u, start))
    for i in rng.permutation(len(chunks)):
        u, start = chunks[i]
        sl = slice(start, start + batch_frames)
        utt = corpus[u]
        yield utt.Y[sl], utt.S[sl], utt.N[sl]


# ---------------------------------------------------------------------------
# optimisation


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to ``learning_rate`` at ``warmup_steps``, then 1/sqrt decay."""
    if step < 1:
        raise ValueError("step counts from 1")
    w = cfg.warmup_steps
    return cfg.learning_rate * min(step / w, math.sqrt(w / step))


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, arrays: dict, grads: dict, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arrays[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def step(self, arrays: dict, grads: dict, lr: float):
        for k, g in grads.items():
            arrays[k] -= lr * g


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return SGD()


def clip_global_norm(grad_dicts, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for d in grad_dicts for g in d.values()))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for d in grad_dicts:
            for g in d.values():
                g *= scale
    return total


# ---------------------------------------------------------------------------
# the full pipeline on one batch


def pipeline_step(
    se: MaskEstimatorParams,
    dsr: DsrnetParams | None,
    Y,
    S,
    N,
    loss_cfg: JointLossConfig,
    se_grads: bool = True,
):
    """Loss terms and gradients of the joint objective on one batch.

    Returns ``(terms, se_grad_dict_or_None, dsr_grad_dict_or_None)``. Without a
    DSRNet the refine term is zero and the downstream proxy sees ``S_hat``.
    """
    M, cache = estimate_mask(se, Y)
    s_hat, n_hat = apply_mask(M, Y)
    l_enh = enh_loss(s_hat, S)
    d_s_hat = loss_cfg.alpha * enh_loss_backward(s_hat, S)
    # refine statistics stay None (blank in the CSV) when there is no DSRNet
    terms = {"l_enh": l_enh, "l_refine": 0.0, "lambda": None, "e_s_tilde": None, "e_n_tilde": None}
    dsr_grads = None
    if dsr is not None:
        _, refined, dcache = dsrnet_forward(dsr, (s_hat, n_hat))
        l_ref, d_st, d_nt, errs = refine_loss(refined, S, N, loss_cfg)
        terms.update(l_refine=l_ref, **{"lambda": errs.lam}, e_s_tilde=errs.e_s_tilde, e_n_tilde=errs.e_n_tilde)
        d_st = loss_cfg.beta * d_st
        d_nt = loss_cfg.beta * d_nt
        proxy_input = refined.s_tilde
    else:
        proxy_input = s_hat
    l_down = 0.0
    if loss_cfg.downstream_mode == "feature_proxy":
        l_down, d_proxy = feature_proxy_loss(proxy_input, S, loss_cfg.mel)
        if dsr is not None:
            d_st = d_st + d_proxy
        else:
            d_s_hat = d_s_hat + d_proxy
    if dsr is not None:
        dsr_grads, d_sh, d_nh = dsrnet_backward(dsr, dcache, d_st, d_nt)
        # N_hat = Y - S_hat
        d_s_hat = d_s_hat + d_sh - d_nh
    terms["l_downstream"] = l_down
    terms["l_total"] = joint_loss(l_down, l_enh, terms["l_refine"], loss_cfg)
    grads = mask_estimator_backward(se, cache, d_s_hat * Y) if se_grads else None
    return terms, grads, dsr_grads


def _trace_row(step, terms):
    return {
        "step": step,
        "l_enh": terms["l_enh"],
        "l_refine": terms["l_refine"],
        "lambda": terms["lambda"],
        "e_s_tilde": terms["e_s_tilde"],
        "e_n_tilde": terms["e_n_tilde"],
        "l_total": terms["l_total"],
    }


def _run(corpus, cfg, loss_cfg, se, dsr, train_se, train_dsr):
    t0 = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    opt_se, opt_dsr = make_optimizer(cfg), make_optimizer(cfg)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        for Y, S, N in iter_batches(corpus, cfg.batch_frames, rng):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            step += 1
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    terms, g_se, g_dsr = pipeline_step(se, dsr, Y, S, N, loss_cfg, se_grads=train_se)
            except (NonFiniteLoss, NonFiniteActivation) as exc:
                raise TrainingDiverged(f"training diverged at step {step}: {exc}") from exc
            active = [g for g, on in ((g_se, train_se), (g_dsr, train_dsr)) if on and g is not None]
            clip_global_norm(active, cfg.clip_norm)
            lr = lr_schedule(step, cfg)
            if train_se:
                opt_se.step(se.arrays, g_se, lr)
            if train_dsr and g_dsr is not None:
                opt_dsr.step(dsr.arrays, g_dsr, lr)
            trace.append(_trace_row(step, terms))
        log.debug("epoch %d done at step %d", epoch, step)
    return TrainReport(trace=trace, seconds=time.perf_counter() - t0, se=se, dsrnet=dsr)


def fresh_estimator(cfg: TrainConfig, n_bins: int = 257) -> MaskEstimatorParams:
    return init_estimator(cfg.variant, n_bins, cfg.hidden, cfg.layers, seed=cfg.seed)


def train_se(corpus, cfg: TrainConfig, se: MaskEstimatorParams | None = None, ckpt_path=None) -> TrainReport:
    """Pre-train the mask estimator on the enhancement MSE alone."""
    corpus = load_corpus(corpus, cfg.synthetic)
    if not corpus:
        raise ValueError("empty corpus")
    se = se.copy() if se is not None else fresh_estimator(cfg, corpus[0].Y.shape[1])
    only_enh = JointLossConfig(alpha=1.0, beta=0.0)
    report = _run(corpus, cfg, only_enh, se, None, train_se=True, train_dsr=False)
    if ckpt_path is not None:
        checkpoint.save(ckpt_path, se, cfg.seed, len(report.trace))
        report.checkpoint_path = str(ckpt_path)
    return report


def train_joint(
    corpus,
    cfg: TrainConfig,
    loss_cfg: JointLossConfig = JointLossConfig(),
    se: MaskEstimatorParams | None = None,
    dsr: DsrnetParams | None = None,
    ckpt_dir=None,
) -> TrainReport:
    """Optimise the joint objective.

    ``regime="joint"`` updates the estimator and DSRNet together; ``"frozen"``
    keeps the estimator fixed and trains DSRNet only. With
    ``cfg.use_dsrnet=False`` only the estimator is trained (joint regime).
    """
    corpus = load_corpus(corpus, cfg.synthetic)
    if not corpus:
        raise ValueError("empty corpus")
    n_bins = corpus[0].Y.shape[1]
    se = se.copy() if se is not None else fresh_estimator(cfg, n_bins)
    if cfg.use_dsrnet:
        dsr = dsr.copy() if dsr is not None else init_dsrnet(n_bins, cfg.seed, cfg.dsrnet_init, cfg.shared_inner)
    else:
        dsr = None
        if cfg.regime == "frozen":
            raise ValueError("frozen regime without DSRNet has nothing to train")
    report = _run(corpus, cfg, loss_cfg, se, dsr, train_se=cfg.regime == "joint", train_dsr=dsr is not None)
    if ckpt_dir is not None:
        ckpt_dir = Path(ckpt_dir)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(ckpt_dir / "se.ckpt", se, cfg.seed, len(report.trace))
        if dsr is not None:
            checkpoint.save(ckpt_dir / "dsrnet.ckpt", dsr, cfg.seed, len(report.trace))
        report.write_trace(ckpt_dir / "trace.csv")
        report.checkpoint_path = str(ckpt_dir)
    return report


def mean_proxy_loss(corpus, se, dsr, mel: MelConfig = MelConfig()) -> float:
    vals = []
    for utt in corpus:
        M, _ = estimate_mask(se, utt.Y)
        s_hat, n_hat = apply_mask(M, utt.Y)
        est = dsrnet_forward(dsr, (s_hat, n_hat))[1].s_tilde if dsr is not None else s_hat
        vals.append(feature_proxy_loss(est, utt.S, mel)[0])
    return float(np.mean(vals))


def sweep_alpha(values, corpus, cfg: TrainConfig, loss_cfg: JointLossConfig = JointLossConfig(), heldout=None, out_csv=None):
    """Train once per ``alpha`` (same seed each time) and tabulate the final proxy loss.

    The proxy loss is the log-mel MSE to clean speech, averaged over
    ``heldout`` (or the training corpus when no held-out set is given).
    """
    values = list(values)
    if not values:
        raise ValueError("need at least one alpha value")
    corpus = load_corpus(corpus, cfg.synthetic)
    heldout = load_corpus(heldout, cfg.synthetic) if heldout is not None else corpus
    rows = []
    for a in values:
        report = train_joint(corpus, cfg, replace(loss_cfg, alpha=float(a)))
        rows.append({"alpha": float(a), "final_proxy_loss": mean_proxy_loss(heldout, report.se, report.dsrnet, loss_cfg.mel)})
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["alpha", "final_proxy_loss"], lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({"alpha": repr(r["alpha"]), "final_proxy_loss": repr(r["final_proxy_loss"])})
    return rows


# ---------------------------------------------------------------------------
# gradient checking


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric) -> float:
    """Normwise relative error ``||a - n|| / max(||a||, ||n||)`` of one block.

    Entrywise ratios are dominated by finite-difference round-off on entries
    many orders below the block's scale, so the block norm is used instead.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / denom) if denom > 0 else 0.0


def _check_blocks(f, analytic: dict, arrays: dict, prefix: str, h: float) -> dict:
    return {f"{prefix}{k}": rel_error(analytic[k], numeric_grad(f, arrays[k], h)) for k in arrays}


GRADCHECK_COMPONENTS = ("enhance", "dsrnet", "loss", "end-to-end")


def gradcheck(component: str, seed: int = 0, n_bins: int = 4, frames: int = 3, hidden: int = 3, step: float = 1e-5) -> dict:
    """Compare analytic and central-difference gradients on a tiny random instance.

    Returns ``{block_name: max_relative_error}``. Shapes: DSRNet and losses use
    ``frames x n_bins``; the estimators use ``hidden`` units and ``frames + 1``
    frames so the recurrence spans several steps.
    """
    rng = np.random.default_rng(seed)
    T, F = frames, n_bins
    report = {}
    if component == "enhance":
        Y = rng.uniform(0.1, 2.0, (T + 1, F))
        R = rng.standard_normal((T + 1, F))
        for variant in ("mlp", "recurrent"):
            p = init_estimator(variant, F, hidden, 2, seed=seed)
            for k in p.arrays:
                p.arrays[k] = rng.uniform(-1, 1, p.arrays[k].shape)
            M, cache = estimate_mask(p, Y)
            g = mask_estimator_backward(p, cache, R)
            f = lambda: float(np.sum(R * estimate_mask(p, Y)[0]))
            report.update(_check_blocks(f, g, p.arrays, f"{variant}:", step))
    elif component == "dsrnet":
        p = init_dsrnet(F, seed, "random")
        for k in p.arrays:
            p.arrays[k] = rng.standard_normal(p.arrays[k].shape)
        s_hat, n_hat = rng.uniform(0, 1, (T, F)), rng.uniform(0, 1, (T, F))
        Rs, Rn = rng.standard_normal((T, F)), rng.standard_normal((T, F))

        def f():
            ref = dsrnet_forward(p, (s_hat, n_hat))[1]
            return float(np.sum(Rs * ref.s_tilde) + np.sum(Rn * ref.n_tilde))

        _, _, cache = dsrnet_forward(p, (s_hat, n_hat))
        g, d_s, d_n = dsrnet_backward(p, cache, Rs, Rn)
        report.update(_check_blocks(f, g, p.arrays, "", step))
        report.update(_check_blocks(f, {"S_hat": d_s, "N_hat": d_n}, {"S_hat": s_hat, "N_hat": n_hat}, "input:", step))
    elif component == "loss":
        S, N = rng.uniform(0, 1, (T, F)), rng.uniform(0, 1, (T, F))
        st, nt = rng.uniform(0, 1, (T, F)), rng.uniform(0, 1, (T, F))
        cfg = JointLossConfig(lambda_mode="fixed", lambda_value=float(rng.uniform(0.1, 0.9)))
        _, d_s, d_n, _ = refine_loss((st, nt), S, N, cfg)
        f = lambda: refine_loss((st, nt), S, N, cfg)[0]
        report.update(_check_blocks(f, {"S_tilde": d_s, "N_tilde": d_n}, {"S_tilde": st, "N_tilde": nt}, "refine:", step))
        mel = _tiny_mel(F)
        Sp = rng.uniform(0.5, 1.5, (T, F))
        sp = rng.uniform(0.5, 1.5, (T, F))
        g = feature_proxy_loss(sp, Sp, mel)[1]
        f = lambda: feature_proxy_loss(sp, Sp, mel)[0]
        report.update(_check_blocks(f, {"S_tilde": g}, {"S_tilde": sp}, "proxy:", step))
    elif component == "end-to-end":
        Y = rng.uniform(0.2, 2.0, (T + 1, F))
        frac = rng.uniform(0.2, 0.8, (T + 1, F))
        S, N = frac * Y, (1 - frac) * Y
        cfg = JointLossConfig(lambda_mode="fixed", lambda_value=0.5, downstream_mode="feature_proxy", mel=_tiny_mel(F))
        for variant in ("mlp", "recurrent"):
            se = init_estimator(variant, F, hidden, 2, seed=seed)
            dsr = init_dsrnet(F, seed, "random")
            for k in dsr.arrays:
                dsr.arrays[k] = rng.uniform(-0.5, 0.5, dsr.arrays[k].shape)
            _, g_se, g_dsr = pipeline_step(se, dsr, Y, S, N, cfg)
            f = lambda: pipeline_step(se, dsr, Y, S, N, cfg, se_grads=False)[0]["l_total"]
            report.update(_check_blocks(f, g_se, se.arrays, f"{variant}:se:", step))
            report.update(_check_blocks(f, g_dsr, dsr.arrays, f"{variant}:dsrnet:", step))
    else:
        raise ValueError(f"unknown component {component!r}; choose from {GRADCHECK_COMPONENTS}")
    return report


def _tiny_mel(n_bins: int) -> MelConfig:
    """A mel configuration small enough to be valid for ``n_bins`` bins."""
    return MelConfig(n_mels=max(1, (n_bins - 1) // 2), sample_rate_hz=16000, fmin_hz=0.0)
