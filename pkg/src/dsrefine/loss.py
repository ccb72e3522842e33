"""Weighted speech-distortion loss, joint loss and error diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .enhance import _check_same, _frames, mse, mse_grad
from .signal import MelConfig, log_mel, log_mel_backward


class NonFiniteLoss(ValueError):
    pass


class RefineErrors(NamedTuple):
    e_s_tilde: float
    e_n_tilde: float
    lam: float


class ErrorDecomposition(NamedTuple):
    e_s: np.ndarray
    e_n: np.ndarray

    def summary(self) -> dict:
        """Absolute-error totals plus a per-frequency-bin breakdown."""
        return {
            "e_s_abs": float(np.abs(self.e_s).sum()),
            "e_n_abs": float(np.abs(self.e_n).sum()),
            "e_s_per_bin": np.abs(self.e_s).sum(axis=0),
            "e_n_per_bin": np.abs(self.e_n).sum(axis=0),
        }


@dataclass(frozen=True)
class JointLossConfig:
    alpha: float = 300.0
    beta: float = 100.0
    lambda_mode: str = "dynamic"  # "dynamic" or "fixed"
    lambda_value: float = 0.5  # used when lambda_mode == "fixed"
    downstream_mode: str = "none"  # "none" or "feature_proxy"
    differentiate_lambda: bool = False
    mel: MelConfig = MelConfig()

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.lambda_mode not in ("dynamic", "fixed"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ValueError("fixed lambda must lie in [0, 1]")
        if self.downstream_mode not in ("none", "feature_proxy"):
            raise ValueError(f"unknown downstream_mode {self.downstream_mode!r}")

    @classmethod
    def parse_lambda(cls, text: str) -> dict:
        """``"dynamic"`` or ``"fixed:<v>"`` -> keyword arguments for the config."""
        if text == "dynamic":
            return {"lambda_mode": "dynamic"}
        if text.startswith("fixed:"):
            return {"lambda_mode": "fixed", "lambda_value": float(text[len("fixed:"):])}
        raise ValueError(f"lambda must be 'dynamic' or 'fixed:<v>', got {text!r}")


def error_weight(e_s: float, e_n: float) -> float:
    """Share of the total L1 error that belongs to speech; 0.5 if both are zero."""
    total = e_s + e_n
    return e_s / total if total > 0 else 0.5


def refine_errors(refined, S, N) -> RefineErrors:
    s_tilde, n_tilde = (np.asarray(a, dtype=np.float64) for a in refined)
    S, N = _frames(S), _frames(N)
    _check_same(s_tilde, S)
    _check_same(n_tilde, N)
    e_s = float(np.abs(S - s_tilde).sum())
    e_n = float(np.abs(N - n_tilde).sum())
    return RefineErrors(e_s, e_n, error_weight(e_s, e_n))


def refine_loss(refined, S, N, cfg: JointLossConfig = JointLossConfig()):
    """Return ``(loss, dL/dS_tilde, dL/dN_tilde, errors)``.

    In dynamic mode the weight is recomputed from this batch and, unless
    ``cfg.differentiate_lambda`` is set, treated as a constant for the gradient.
    """
    s_tilde, n_tilde = (np.asarray(a, dtype=np.float64) for a in refined)
    S, N = _frames(S), _frames(N)
    errs = refine_errors((s_tilde, n_tilde), S, N)
    lam = errs.lam if cfg.lambda_mode == "dynamic" else cfg.lambda_value
    errs = errs._replace(lam=lam)
    l_s, l_n = mse(s_tilde, S), mse(n_tilde, N)
    loss = lam * l_s + (1.0 - lam) * l_n
    d_s = lam * mse_grad(s_tilde, S)
    d_n = (1.0 - lam) * mse_grad(n_tilde, N)
    if cfg.lambda_mode == "dynamic" and cfg.differentiate_lambda:
        total = errs.e_s_tilde + errs.e_n_tilde
        if total > 0:
            d_lam = l_s - l_n
            d_s = d_s + d_lam * errs.e_n_tilde / total**2 * np.sign(s_tilde - S)
            d_n = d_n - d_lam * errs.e_s_tilde / total**2 * np.sign(n_tilde - N)
    return loss, d_s, d_n, errs


def feature_proxy_loss(s_tilde, S, mel: MelConfig = MelConfig()):
    """Log-mel MSE between the clamped refined speech and the clean speech.

    Returns ``(loss, dL/dS_tilde)``; no gradient flows where ``S_tilde < 0``.
    """
    s_tilde = np.asarray(s_tilde, dtype=np.float64)
    S = _frames(S)
    clamped = np.maximum(s_tilde, 0.0)
    a, b = log_mel(clamped, mel), log_mel(S, mel)
    grad = log_mel_backward(clamped, mse_grad(a, b), mel) * (s_tilde > 0)
    return mse(a, b), grad


def joint_loss(l_downstream: float, l_enh: float, l_refine: float, cfg: JointLossConfig = JointLossConfig()) -> float:
    terms = (l_downstream, l_enh, l_refine)
    if not all(math.isfinite(t) for t in terms):
        raise NonFiniteLoss(f"non-finite loss term in {terms}")
    if any(t < 0 for t in terms):
        raise ValueError(f"negative loss term in {terms}")
    if cfg.downstream_mode == "none":
        l_downstream = 0.0
    return l_downstream + cfg.alpha * l_enh + cfg.beta * l_refine


def error_decomposition(pair, S, N) -> ErrorDecomposition:
    s_hat, n_hat = (np.asarray(a, dtype=np.float64) for a in pair)
    S, N = _frames(S), _frames(N)
    _check_same(s_hat, S)
    _check_same(n_hat, N)
    return ErrorDecomposition(s_hat - S, n_hat - N)
