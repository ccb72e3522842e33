"""Waveform I/O, STFT/iSTFT, magnitude/phase handling and log-mel features.

Conventions used throughout the package:

* spectrogram matrices are ``T x F`` (frames are rows, bins are columns);
* all arithmetic is float64 / complex128;
* frames are centred by reflect-padding ``window_len // 2`` samples on each
  side, and analysed with a periodic Hann window.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PCM16_SCALE = 32768.0


class WavFormatError(ValueError):
    """The file is not a well-formed RIFF/WAVE file."""


class UnsupportedEncodingError(ValueError):
    """Well-formed WAV, but not 16-bit PCM mono."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if self.samples.size == 0:
            raise ValueError("empty waveform")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        self.sample_rate_hz = int(self.sample_rate_hz)

    def __len__(self):
        return self.samples.size

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))


@dataclass
class ComplexSpectrogram:
    """STFT frames plus the metadata needed to invert them.

    ``pad`` is the number of reflect-padded samples on each side and
    ``n_samples`` the length of the original (unpadded) signal.
    """

    frames: np.ndarray
    window_len: int
    hop_len: int
    sample_rate_hz: int = 16000
    pad: int = 0
    n_samples: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("spectrogram must be a T x F matrix with T >= 1")
        if self.frames.shape[1] != self.window_len // 2 + 1:
            raise ValueError(
                f"bin count {self.frames.shape[1]} does not match "
                f"window_len {self.window_len} (expected {self.window_len // 2 + 1})"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("spectrogram contains non-finite entries")

    @property
    def shape(self):
        return self.frames.shape

    @property
    def padded_len(self) -> int:
        return (self.frames.shape[0] - 1) * self.hop_len + self.window_len


@dataclass
class MagnitudeSpectrogram:
    frames: np.ndarray
    window_len: int = 512
    hop_len: int = 128
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("magnitude spectrogram must be a T x F matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("magnitude spectrogram contains non-finite entries")
        if np.any(self.frames < 0):
            raise ValueError("magnitude spectrogram has negative entries")

    @property
    def shape(self):
        return self.frames.shape


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float | None = None
    floor_value: float = 1e-10
    sample_rate_hz: int = 16000

    @property
    def top_hz(self) -> float:
        return self.sample_rate_hz / 2 if self.fmax_hz is None else float(self.fmax_hz)

    def validate(self):
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0 <= self.fmin_hz < self.top_hz <= self.sample_rate_hz / 2:
            raise ValueError(
                f"need 0 <= fmin < fmax <= sr/2, got fmin={self.fmin_hz}, fmax={self.top_hz}"
            )
        if not self.floor_value > 0:
            raise ValueError("floor_value must be positive")


# ---------------------------------------------------------------------------
# WAV I/O


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        if str(exc).startswith("unknown format"):
            raise UnsupportedEncodingError(f"{path}: {exc}") from exc
        raise WavFormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated header") from exc
    if width != 2:
        raise UnsupportedEncodingError(f"{path}: {8 * width}-bit samples, need 16-bit PCM")
    if n_channels != 1:
        raise UnsupportedEncodingError(f"{path}: {n_channels} channels, need mono")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise ValueError("empty waveform")
    return Waveform(pcm.astype(np.float64) / PCM16_SCALE, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path, w: Waveform):
    """Write ``w`` as 16-bit PCM mono. Samples outside [-1, 1) are clipped."""
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(to_pcm16(w.samples).tobytes())


# ---------------------------------------------------------------------------
# STFT


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(w: Waveform, window_len: int = 512, hop_len: int = 128) -> ComplexSpectrogram:
    if not window_len >= hop_len >= 1:
        raise ValueError("need window_len >= hop_len >= 1")
    pad = window_len // 2
    x = w.samples
    if x.size <= pad:
        raise ValueError(
            f"waveform too short: {x.size} samples, reflect padding needs more than {pad}"
        )
    padded = np.pad(x, pad, mode="reflect")
    n_frames = (padded.size - window_len) // hop_len + 1
    idx = np.arange(window_len)[None, :] + hop_len * np.arange(n_frames)[:, None]
    frames = padded[idx] * hann_window(window_len)
    return ComplexSpectrogram(
        np.fft.rfft(frames, axis=1),
        window_len,
        hop_len,
        sample_rate_hz=w.sample_rate_hz,
        pad=pad,
        n_samples=x.size,
    )


def istft(c: ComplexSpectrogram, trim: bool = False) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`.

    Returns the padded-length signal; ``trim=True`` drops the reflect padding
    and returns exactly ``c.n_samples`` samples. Samples whose window-square
    sum is zero are only tolerated inside the padding (they are set to 0).
    """
    win = hann_window(c.window_len)
    frames = np.fft.irfft(c.frames, n=c.window_len, axis=1) * win
    n_frames = frames.shape[0]
    out = np.zeros(c.padded_len)
    norm = np.zeros(c.padded_len)
    for t in range(n_frames):
        sl = slice(t * c.hop_len, t * c.hop_len + c.window_len)
        out[sl] += frames[t]
        norm[sl] += win * win

    tiny = np.finfo(np.float64).tiny
    zero = norm <= tiny
    if np.any(zero):
        lo = c.pad
        hi = c.padded_len - c.pad if c.n_samples is None else c.pad + c.n_samples
        bad = np.flatnonzero(zero[lo:hi])
        if bad.size:
            raise ValueError(
                f"zero overlap-add normalisation at sample {lo + bad[0]}; "
                "window/hop do not cover the signal"
            )
    out = np.where(zero, 0.0, out / np.where(zero, 1.0, norm))
    if trim:
        end = c.pad + (c.n_samples if c.n_samples is not None else c.padded_len - 2 * c.pad)
        out = out[c.pad:end]
    return Waveform(out, c.sample_rate_hz)


def magnitude(c: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(np.abs(c.frames), c.window_len, c.hop_len, c.sample_rate_hz)


def phase(c: ComplexSpectrogram) -> np.ndarray:
    # np.angle(0) is already 0, which is the convention we want
    return np.angle(c.frames)


def reconstruct(mag, phase_: np.ndarray, like: ComplexSpectrogram | None = None) -> ComplexSpectrogram:
    """Rebuild complex frames from magnitudes and phases.

    ``like`` supplies window/hop/padding metadata (typically the noisy STFT whose
    phase is being reused).
    """
    m = mag.frames if isinstance(mag, MagnitudeSpectrogram) else np.asarray(mag, dtype=np.float64)
    phase_ = np.asarray(phase_, dtype=np.float64)
    if m.shape != phase_.shape:
        raise ValueError(f"shape mismatch: magnitude {m.shape} vs phase {phase_.shape}")
    frames = m * np.exp(1j * phase_)
    if like is not None:
        return ComplexSpectrogram(
            frames, like.window_len, like.hop_len, like.sample_rate_hz, like.pad, like.n_samples
        )
    window_len = mag.window_len if isinstance(mag, MagnitudeSpectrogram) else 2 * (m.shape[1] - 1)
    hop_len = mag.hop_len if isinstance(mag, MagnitudeSpectrogram) else window_len // 4
    return ComplexSpectrogram(frames, window_len, hop_len, pad=window_len // 2)


# ---------------------------------------------------------------------------
# Mel features


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig, n_bins: int) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape ``(n_mels, n_bins)``.

    Filters are evaluated on the continuous bin frequencies, so a filter
    narrower than one bin can come out empty; that is reported as an error.
    """
    cfg.validate()
    n_fft = 2 * (n_bins - 1)
    bin_hz = np.arange(n_bins) * cfg.sample_rate_hz / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.top_hz), cfg.n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lower) / (centre - lower)
    falling = (upper - bin_hz[None, :]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"mel filter {empty[0]} covers no FFT bin; reduce n_mels or widen fmin/fmax"
        )
    return fb


def log_mel(mag, cfg: MelConfig = MelConfig()) -> np.ndarray:
    m = mag.frames if isinstance(mag, MagnitudeSpectrogram) else np.asarray(mag, dtype=np.float64)
    fb = mel_filterbank(cfg, m.shape[1])
    return np.log(np.maximum((m * m) @ fb.T, cfg.floor_value))


def log_mel_backward(mag: np.ndarray, grad_out: np.ndarray, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Gradient of ``sum(grad_out * log_mel(mag))`` with respect to ``mag``."""
    fb = mel_filterbank(cfg, mag.shape[1])
    energy = (mag * mag) @ fb.T
    d_energy = np.where(energy > cfg.floor_value, grad_out / np.maximum(energy, cfg.floor_value), 0.0)
    return 2.0 * mag * (d_energy @ fb)
