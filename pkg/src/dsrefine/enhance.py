"""Mask-based enhancement front-end: oracle and trainable mask estimators.

A mask ``M`` in [0, 1] is applied to the noisy magnitude ``Y`` to give the
speech estimate ``S_hat = M * Y``; the noise estimate is the remainder
``N_hat = Y - S_hat``.

Trainable estimators work frame-wise on ``x = log(Y + 1e-8)`` and end in a
sigmoid. Two variants exist: ``mlp`` (tanh hidden layers, frames independent)
and ``recurrent`` (stacked LSTM run over the frames in order). Gradients are
computed by hand; ``mask_estimator_backward`` consumes the cache produced by
``estimate_mask``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

INPUT_EPS = 1e-8
VARIANTS = ("mlp", "recurrent")


class NonFiniteActivation(FloatingPointError):
    pass


class EnhancedPair(NamedTuple):
    s_hat: np.ndarray
    n_hat: np.ndarray


def _frames(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def _check_same(a, b, what="shape"):
    if a.shape != b.shape:
        raise ValueError(f"{what} mismatch: {a.shape} vs {b.shape}")


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# masking


def oracle_mask(S, N) -> np.ndarray:
    """Ideal ratio mask ``S / (S + N)``, 0 where both are 0, clipped to [0, 1].

    The mask is returned in extended precision: no float64 ``m`` satisfies
    ``m * (S + N) == S`` for every pair, but the extended-precision product
    rounds back to ``S`` exactly.
    """
    S, N = _frames(S), _frames(N)
    _check_same(S, N)
    total = S + N
    m = np.divide(S.astype(np.longdouble), total, out=np.zeros(S.shape, np.longdouble), where=total > 0)
    return np.clip(m, 0.0, 1.0)


def apply_mask(M, Y) -> EnhancedPair:
    M = np.asarray(getattr(M, "frames", M))
    if M.dtype != np.longdouble:
        M = M.astype(np.float64)
    Y = _frames(Y)
    _check_same(M, Y)
    s_hat = (M * Y).astype(np.float64)
    n_hat = Y - s_hat
    # Y - s_hat is exact when s_hat >= Y/2 (Sterbenz). Otherwise take s_hat
    # back from n_hat, which is then exact, so s_hat + n_hat == Y bitwise.
    # The adjustment is at most half an ulp of n_hat.
    low = s_hat < n_hat
    s_hat[low] = Y[low] - n_hat[low]
    return EnhancedPair(s_hat, n_hat)


def mse(a, b) -> float:
    a, b = _frames(a), _frames(b)
    _check_same(a, b)
    d = a - b
    return float(np.mean(d * d))


def mse_grad(a, b) -> np.ndarray:
    a, b = _frames(a), _frames(b)
    _check_same(a, b)
    return 2.0 * (a - b) / a.size


def enh_loss(s_hat, S) -> float:
    return mse(s_hat, S)


def enh_loss_backward(s_hat, S) -> np.ndarray:
    return mse_grad(s_hat, S)


# ---------------------------------------------------------------------------
# trainable estimators


@dataclass
class MaskEstimatorParams:
    variant: str
    n_bins: int
    hidden: tuple
    arrays: dict = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "MaskEstimatorParams":
        return MaskEstimatorParams(
            self.variant, self.n_bins, tuple(self.hidden), {k: v.copy() for k, v in self.arrays.items()}
        )

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k, v in self.arrays.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()


def init_estimator(
    variant: str = "recurrent",
    n_bins: int = 257,
    hidden: int = 1024,
    layers: int = 2,
    seed: int = 0,
    zero_output: bool = False,
) -> MaskEstimatorParams:
    """Uniform(+-1/sqrt(fan_in)) init; LSTM forget-gate bias starts at 1."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown estimator variant {variant!r}; choose from {VARIANTS}")
    rng = np.random.default_rng(seed)

    def uni(fan_in, shape):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    arrays = {}
    fan = n_bins
    for layer in range(layers):
        if variant == "mlp":
            arrays[f"l{layer}.W"] = uni(fan, (fan, hidden))
            arrays[f"l{layer}.b"] = np.zeros(hidden)
        else:
            arrays[f"l{layer}.Wx"] = uni(fan, (fan, 4 * hidden))
            arrays[f"l{layer}.Wh"] = uni(hidden, (hidden, 4 * hidden))
            b = np.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0
            arrays[f"l{layer}.b"] = b
        fan = hidden
    arrays["out.W"] = np.zeros((fan, n_bins)) if zero_output else uni(fan, (fan, n_bins))
    arrays["out.b"] = np.zeros(n_bins)
    return MaskEstimatorParams(variant, n_bins, (hidden,) * layers, arrays)


def _finite(a, layer):
    if not np.all(np.isfinite(a)):
        raise NonFiniteActivation(f"non-finite activation in layer {layer}")
    return a


def _lstm_forward(X, Wx, Wh, b):
    T = X.shape[0]
    H = Wh.shape[0]
    Zx = X @ Wx + b
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    gates = np.zeros((T, 4 * H))
    for t in range(T):
        z = Zx[t] + hs[t] @ Wh
        i = sigmoid(z[:H])
        f = sigmoid(z[H:2 * H])
        g = np.tanh(z[2 * H:3 * H])
        o = sigmoid(z[3 * H:])
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gates[t] = np.concatenate([i, f, g, o])
    return hs, cs, gates


def _lstm_backward(X, Wx, Wh, hs, cs, gates, dH):
    """BPTT for one layer. ``dH`` is dL/dh_t from above for t = 1..T."""
    T, H = dH.shape
    dZ = np.zeros((T, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in reversed(range(T)):
        i, f, g, o = gates[t, :H], gates[t, H:2 * H], gates[t, 2 * H:3 * H], gates[t, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dZ[t, :H] = dc * g * i * (1.0 - i)
        dZ[t, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dZ[t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dZ[t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dZ[t] @ Wh.T
    return {
        "Wx": X.T @ dZ,
        "Wh": hs[:-1].T @ dZ,
        "b": dZ.sum(axis=0),
    }, dZ @ Wx.T


def estimate_mask(params: MaskEstimatorParams, Y):
    """Run the estimator on ``Y`` (T x F). Returns ``(mask, cache)``."""
    Y = _frames(Y)
    if Y.ndim != 2 or Y.shape[1] != params.n_bins:
        raise ValueError(f"input has {Y.shape[-1]} bins, estimator expects {params.n_bins}")
    a = params.arrays
    x = np.log(Y + INPUT_EPS)
    acts = [x]
    lstm_state = []
    for layer in range(len(params.hidden)):
        if params.variant == "mlp":
            h = np.tanh(acts[-1] @ a[f"l{layer}.W"] + a[f"l{layer}.b"])
        else:
            hs, cs, gates = _lstm_forward(acts[-1], a[f"l{layer}.Wx"], a[f"l{layer}.Wh"], a[f"l{layer}.b"])
            lstm_state.append((hs, cs, gates))
            h = hs[1:]
        acts.append(_finite(h, layer))
    M = _finite(sigmoid(acts[-1] @ a["out.W"] + a["out.b"]), "out")
    cache = {
        "variant": params.variant,
        "shapes": {k: v.shape for k, v in a.items()},
        "acts": acts,
        "lstm": lstm_state,
        "mask": M,
    }
    return M, cache


def mask_estimator_backward(params: MaskEstimatorParams, cache, dM) -> dict:
    """Gradients of the loss w.r.t. every parameter array, given dL/dM."""
    a = params.arrays
    if cache["variant"] != params.variant or cache["shapes"] != {k: v.shape for k, v in a.items()}:
        raise ValueError("cache does not belong to these parameters")
    dM = np.asarray(dM, dtype=np.float64)
    M = cache["mask"]
    _check_same(dM, M, "gradient")
    acts = cache["acts"]
    grads = {}
    dz = dM * M * (1.0 - M)
    grads["out.W"] = acts[-1].T @ dz
    grads["out.b"] = dz.sum(axis=0)
    dh = dz @ a["out.W"].T
    for layer in reversed(range(len(params.hidden))):
        x_in = acts[layer]
        if params.variant == "mlp":
            h = acts[layer + 1]
            dpre = dh * (1.0 - h * h)
            grads[f"l{layer}.W"] = x_in.T @ dpre
            grads[f"l{layer}.b"] = dpre.sum(axis=0)
            dh = dpre @ a[f"l{layer}.W"].T
        else:
            hs, cs, gates = cache["lstm"][layer]
            g, dh = _lstm_backward(x_in, a[f"l{layer}.Wx"], a[f"l{layer}.Wh"], hs, cs, gates, dh)
            for k, v in g.items():
                grads[f"l{layer}.{k}"] = v
    return {k: grads[k] for k in a}
