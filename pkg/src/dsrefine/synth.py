"""Deterministic synthetic WAV pools for desk-scale experiments and tests.

The "speech" is a voiced harmonic source with a wandering pitch, a few
formant-like resonances and a syllabic on/off envelope. Noises are coloured
stationary and modulated signals. None of this aims to be realistic; it only
needs spectro-temporal structure a mask estimator can learn.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .signal import Waveform, write_wav

NOISE_KINDS = ("white", "pink", "brown", "hum", "chirp", "burst")


def speech_like(rng: np.random.Generator, seconds: float = 1.0, sr: int = 16000) -> np.ndarray:
    n = int(seconds * sr)
    t = np.arange(n) / sr
    f0 = rng.uniform(90, 240) * (1 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 6.3)))
    ph = 2 * np.pi * np.cumsum(f0) / sr
    formants = rng.uniform([300, 900, 2000], [900, 2200, 3500])
    x = np.zeros(n)
    for k in range(1, 40):
        fk = k * f0
        amp = sum(1.0 / (1.0 + ((fk - fc) / 150.0) ** 2) for fc in formants) / k**0.5
        x += np.where(fk < sr / 2, amp, 0.0) * np.sin(k * ph)
    rate = rng.uniform(3.0, 6.0)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 6.3)), 0, None) ** 0.7
    x *= env
    return 0.3 * x / np.max(np.abs(x))


def noise_like(kind: str, rng: np.random.Generator, seconds: float = 1.5, sr: int = 16000) -> np.ndarray:
    n = int(seconds * sr)
    t = np.arange(n) / sr
    if kind in ("white", "pink", "brown"):
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.size) + 1.0
        spec *= {"white": 1.0, "pink": f**-0.5, "brown": f**-1.0}[kind]
        x = np.fft.irfft(spec, n)
    elif kind == "hum":
        base = rng.uniform(50, 120)
        x = sum(np.sin(2 * np.pi * base * k * t + rng.uniform(0, 6.3)) / k for k in range(1, 8))
        x = x + 0.05 * rng.standard_normal(n)
    elif kind == "chirp":
        f = rng.uniform(500, 1500) + rng.uniform(1000, 4000) * (t % 0.5)
        x = np.sin(2 * np.pi * np.cumsum(f) / sr) + 0.1 * rng.standard_normal(n)
    elif kind == "burst":
        gate = (np.sin(2 * np.pi * rng.uniform(2, 8) * t) > 0.3).astype(float)
        x = gate * rng.standard_normal(n) + 0.02 * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return 0.3 * x / np.max(np.abs(x))


def write_pools(out_dir, n_clean: int, seed: int = 0, seconds: float = 1.0, sr: int = 16000):
    """Write ``clean/`` and ``noise/`` WAV pools under ``out_dir``; return both dirs."""
    out_dir = Path(out_dir)
    clean_dir, noise_dir = out_dir / "clean", out_dir / "noise"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_clean):
        write_wav(clean_dir / f"utt{i:04d}.wav", Waveform(speech_like(rng, seconds, sr), sr))
    for kind in NOISE_KINDS:
        write_wav(noise_dir / f"{kind}.wav", Waveform(noise_like(kind, rng, 1.5 * seconds, sr), sr))
    return clean_dir, noise_dir
