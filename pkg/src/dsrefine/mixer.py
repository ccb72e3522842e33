"""SNR-controlled noisy corpus simulation with JSON Lines manifests."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .signal import (
    MagnitudeSpectrogram,
    Waveform,
    magnitude,
    read_wav,
    stft,
    write_wav,
)

log = logging.getLogger(__name__)

SNR_GRID_DB = (-10.0, -5.0, 0.0, 5.0)
# largest PCM16 value expressed in float units
PCM16_PEAK = 32767.0 / 32768.0


@dataclass(frozen=True)
class MixSpec:
    snr_db: float | None = None
    snr_mode: str = "fixed"  # fixed | randomized
    seed: int = 0
    noise_selection: int | str = "randomized"
    snr_choices: tuple = SNR_GRID_DB

    def __post_init__(self):
        if self.snr_mode not in ("fixed", "randomized"):
            raise ValueError(f"unknown snr_mode {self.snr_mode!r}")
        if self.snr_mode == "fixed" and (self.snr_db is None or not np.isfinite(self.snr_db)):
            raise ValueError("fixed snr_mode needs a finite snr_db")


@dataclass
class Manifest:
    utt_id: str
    clean_path: str
    noise_path: str
    mixed_path: str
    snr_db: float
    seed: int
    noise_offset: int
    export_gain: float = 1.0

    def __post_init__(self):
        for name in ("clean_path", "noise_path", "mixed_path"):
            if not getattr(self, name):
                raise ValueError(f"manifest field {name} is empty")
        if not np.isfinite(self.snr_db):
            raise ValueError("manifest snr_db must be finite")


def write_manifest(path, rows: list[Manifest]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(asdict(row), sort_keys=False) + "\n")


def read_manifest(path) -> list[Manifest]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(Manifest(**json.loads(line)))
    return rows


def utterance_seed(seed: int, utt_id: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{utt_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def noise_segment(noise: np.ndarray, offset: int, length: int) -> np.ndarray:
    """Loop ``noise`` from ``offset`` until ``length`` samples are collected."""
    idx = (int(offset) + np.arange(length)) % noise.size
    return noise[idx]


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, noise_offset: int = 0):
    """Return ``(mixed, scaled_noise)`` with the requested full-utterance SNR."""
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError(
            f"sample rate mismatch: clean {clean.sample_rate_hz} Hz, noise {noise.sample_rate_hz} Hz"
        )
    e_clean = clean.energy()
    if e_clean <= 0:
        raise ValueError("clean signal has zero energy")
    seg = noise_segment(noise.samples, noise_offset, len(clean))
    e_noise = float(np.dot(seg, seg))
    if e_noise <= 0:
        raise ValueError("noise segment has zero energy")
    gain = np.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0)))
    scaled = gain * seg
    return (
        Waveform(clean.samples + scaled, clean.sample_rate_hz),
        Waveform(scaled, clean.sample_rate_hz),
    )


def measured_snr(clean: Waveform, scaled_noise: Waveform) -> float:
    return 10.0 * np.log10(clean.energy() / scaled_noise.energy())


def _load_pool(directory) -> list[tuple[str, Path, Waveform]]:
    pool = []
    for path in sorted(Path(directory).glob("*.wav")):
        try:
            pool.append((path.stem, path, read_wav(path)))
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable file %s: %s", path, exc)
    return pool


def simulate_corpus(clean_dir, noise_dir, spec: MixSpec, out_dir) -> list[Manifest]:
    """Mix every clean utterance with one noise file; write WAVs and ``manifest.jsonl``.

    Each utterance draws its SNR (randomized mode), its noise file (unless a
    fixed index is given) and its noise offset from ``utterance_seed(seed, utt_id)``,
    so results do not depend on processing order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noises = _load_pool(noise_dir)
    if not noises:
        raise ValueError(f"no readable noise WAVs in {noise_dir}")
    rows = []
    for utt_id, clean_path, clean in _load_pool(clean_dir):
        useed = utterance_seed(spec.seed, utt_id)
        rng = np.random.default_rng(useed)
        if spec.snr_mode == "randomized":
            snr = float(spec.snr_choices[rng.integers(len(spec.snr_choices))])
        else:
            snr = float(spec.snr_db)
        if spec.noise_selection == "randomized":
            n_idx = int(rng.integers(len(noises)))
        else:
            n_idx = int(spec.noise_selection) % len(noises)
        _, noise_path, noise = noises[n_idx]
        offset = int(rng.integers(len(noise)))
        try:
            mixed, _ = mix_at_snr(clean, noise, snr, offset)
        except ValueError as exc:
            log.warning("skipping %s: %s", utt_id, exc)
            continue
        peak = float(np.max(np.abs(mixed.samples)))
        gain = PCM16_PEAK / peak if peak > PCM16_PEAK else 1.0
        mixed_path = out_dir / f"{utt_id}_mix.wav"
        write_wav(mixed_path, Waveform(mixed.samples * gain, mixed.sample_rate_hz))
        rows.append(
            Manifest(
                utt_id=utt_id,
                clean_path=str(clean_path),
                noise_path=str(noise_path),
                mixed_path=str(mixed_path),
                snr_db=snr,
                seed=useed,
                noise_offset=offset,
                export_gain=gain,
            )
        )
    if not rows:
        raise ValueError("corpus simulation produced no mixtures")
    write_manifest(out_dir / "manifest.jsonl", rows)
    return rows


def load_waveforms(row: Manifest):
    """Return ``(mixed, clean, scaled_noise)`` waveforms for a manifest row.

    The scaled noise is recomputed from the clean/noise files and the recorded
    offset and SNR; the mixture is read back and the export gain undone.
    """
    clean = read_wav(row.clean_path)
    noise = read_wav(row.noise_path)
    if not np.any(noise.samples):
        scaled = Waveform(np.zeros(len(clean)), clean.sample_rate_hz)
    else:
        _, scaled = mix_at_snr(clean, noise, row.snr_db, row.noise_offset)
    mixed = read_wav(row.mixed_path)
    mixed = Waveform(mixed.samples / row.export_gain, mixed.sample_rate_hz)
    return mixed, clean, scaled


SYNTH_GRID_BITS = 40


def synthetic_pair(S, N):
    """Snap ``S`` and ``N`` to a dyadic grid and return ``(Y, S, N)`` with ``Y = S + N``.

    On the grid (multiples of 2**-40, magnitudes below 2**13) the sum and the
    difference ``Y - S`` are exact in float64, so the additive model holds with
    no rounding at all.
    """
    S, N = (np.ldexp(np.rint(np.ldexp(np.asarray(a, dtype=np.float64), SYNTH_GRID_BITS)), -SYNTH_GRID_BITS) for a in (S, N))
    if max(S.max(initial=0.0), N.max(initial=0.0)) >= 2.0 ** (52 - SYNTH_GRID_BITS):
        raise ValueError("magnitude too large for the exact synthetic grid")
    return S + N, S, N


def magnitude_triplet(row: Manifest, synthetic: bool = False, window_len: int = 512, hop_len: int = 128):
    """Return ``(Y, S, N)`` magnitude spectrograms for a manifest row.

    With ``synthetic=True`` the noisy magnitude is built as ``Y = S + N`` so the
    additive model holds exactly; otherwise ``Y`` is the magnitude of the
    recorded mixture and additivity only holds approximately.
    """
    mixed, clean, scaled = load_waveforms(row)
    S = magnitude(stft(clean, window_len, hop_len))
    N = magnitude(stft(scaled, window_len, hop_len))
    if synthetic:
        y, s, n = synthetic_pair(S.frames, N.frames)
        Y, S, N = (MagnitudeSpectrogram(a, window_len, hop_len, S.sample_rate_hz) for a in (y, s, n))
    else:
        Y = magnitude(stft(mixed, window_len, hop_len))
    return Y, S, N


def additivity_error(Y: MagnitudeSpectrogram, S: MagnitudeSpectrogram, N: MagnitudeSpectrogram) -> float:
    """Diagnostic ``||Y - (S + N)|| / ||Y||``."""
    denom = np.linalg.norm(Y.frames)
    return float(np.linalg.norm(Y.frames - S.frames - N.frames) / denom) if denom > 0 else 0.0
