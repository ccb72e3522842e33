"""Dual-stream spectrogram refine network.

Each stream ``k`` in {s, n} maps the enhanced pair to a residual, frame by
frame, with no nonlinearity::

    h_k     = W_s[k] @ S_hat_t + W_n[k] @ N_hat_t
    theta_k = W_hat[k] @ h_k + b_hat[k]

and the refined spectrograms are ``S_tilde = S_hat + theta_s`` and
``N_tilde = N_hat + theta_n``. By default the two streams own disjoint
parameters; ``shared_inner=True`` makes them share ``W_s`` and ``W_n``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

STREAMS = ("s", "n")


class ResidualPair(NamedTuple):
    theta_s: np.ndarray
    theta_n: np.ndarray


class RefinedPair(NamedTuple):
    s_tilde: np.ndarray
    n_tilde: np.ndarray


@dataclass
class DsrnetParams:
    n_bins: int
    shared_inner: bool = False
    arrays: dict = field(default_factory=dict)

    def inner(self, stream: str):
        key = "shared" if self.shared_inner else stream
        return self.arrays[f"{key}.W_s"], self.arrays[f"{key}.W_n"]

    def outer(self, stream: str):
        return self.arrays[f"{stream}.W_hat"], self.arrays[f"{stream}.b_hat"]

    def copy(self) -> "DsrnetParams":
        return DsrnetParams(self.n_bins, self.shared_inner, {k: v.copy() for k, v in self.arrays.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, v in self.arrays.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()


def init_dsrnet(n_bins: int = 257, seed: int = 0, mode: str = "identity", shared_inner: bool = False) -> DsrnetParams:
    """Build DSRNet parameters.

    ``mode``: ``identity`` (inner weights uniform(+-1/sqrt(F)), outer weights and
    biases zero, so the network starts as an exact no-op), ``zero`` (all zeros)
    or ``random`` (every weight uniform, biases zero).
    """
    if mode not in ("identity", "zero", "random"):
        raise ValueError(f"unknown init mode {mode!r}")
    rng = np.random.default_rng(seed)
    lim = 1.0 / np.sqrt(n_bins)
    F = n_bins

    def inner():
        if mode == "zero":
            return np.zeros((F, F))
        return rng.uniform(-lim, lim, (F, F))

    arrays = {}
    for key in ("shared",) if shared_inner else STREAMS:
        arrays[f"{key}.W_s"] = inner()
        arrays[f"{key}.W_n"] = inner()
    for k in STREAMS:
        arrays[f"{k}.W_hat"] = rng.uniform(-lim, lim, (F, F)) if mode == "random" else np.zeros((F, F))
        arrays[f"{k}.b_hat"] = np.zeros(F)
    return DsrnetParams(n_bins, shared_inner, arrays)


def dsrnet_forward(params: DsrnetParams, pair):
    s_hat, n_hat = (np.asarray(a, dtype=np.float64) for a in pair)
    if s_hat.shape != n_hat.shape or s_hat.ndim != 2 or s_hat.shape[1] != params.n_bins:
        raise ValueError(
            f"enhanced pair shapes {s_hat.shape}/{n_hat.shape} do not fit {params.n_bins} bins"
        )
    hidden, theta = {}, {}
    for k in STREAMS:
        W_s, W_n = params.inner(k)
        W_hat, b_hat = params.outer(k)
        hidden[k] = s_hat @ W_s.T + n_hat @ W_n.T
        theta[k] = hidden[k] @ W_hat.T + b_hat
    residual = ResidualPair(theta["s"], theta["n"])
    refined = RefinedPair(s_hat + theta["s"], n_hat + theta["n"])
    cache = {"s_hat": s_hat, "n_hat": n_hat, "hidden": hidden, "shared_inner": params.shared_inner}
    return residual, refined, cache


def dsrnet_backward(params: DsrnetParams, cache, d_s_tilde, d_n_tilde):
    """Return ``(param_grads, dL/dS_hat, dL/dN_hat)``.

    The input gradients do not include the coupling ``N_hat = Y - S_hat``;
    callers that mask ``Y`` must fold ``-dL/dN_hat`` into ``dL/dS_hat`` themselves.
    """
    if cache["shared_inner"] != params.shared_inner:
        raise ValueError("cache does not belong to these parameters")
    s_hat, n_hat = cache["s_hat"], cache["n_hat"]
    upstream = {"s": np.asarray(d_s_tilde, dtype=np.float64), "n": np.asarray(d_n_tilde, dtype=np.float64)}
    for d in upstream.values():
        if d.shape != s_hat.shape:
            raise ValueError(f"upstream gradient shape {d.shape} does not match {s_hat.shape}")
    grads = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    d_s_hat = upstream["s"].copy()
    d_n_hat = upstream["n"].copy()
    for k in STREAMS:
        d_theta = upstream[k]
        W_s, W_n = params.inner(k)
        W_hat, _ = params.outer(k)
        grads[f"{k}.W_hat"] = d_theta.T @ cache["hidden"][k]
        grads[f"{k}.b_hat"] = d_theta.sum(axis=0)
        dh = d_theta @ W_hat
        key = "shared" if params.shared_inner else k
        grads[f"{key}.W_s"] += dh.T @ s_hat
        grads[f"{key}.W_n"] += dh.T @ n_hat
        d_s_hat += dh @ W_s
        d_n_hat += dh @ W_n
    return grads, d_s_hat, d_n_hat
