"""Per-utterance metrics and per-SNR summaries for a trained pipeline."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .dsrnet import DsrnetParams, dsrnet_forward
from .enhance import MaskEstimatorParams, apply_mask, estimate_mask, mse, oracle_mask
from .loss import error_decomposition
from .mixer import load_waveforms, synthetic_pair
from .signal import Waveform, istft, magnitude, phase, reconstruct, stft

SI_SNR_CAP_DB = 100.0
REPORT_COLUMNS = (
    "utt_id",
    "snr_db",
    "spectral_mse_enhanced",
    "spectral_mse_refined",
    "e_s_abs",
    "e_n_abs",
    "si_snr_noisy",
    "si_snr_enhanced",
    "si_snr_refined",
)


def si_snr(estimate, reference) -> float:
    """Scale-invariant SNR in dB, capped at ``SI_SNR_CAP_DB``."""
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0:
        raise ValueError("reference signal is all zeros")
    target = np.dot(est, ref) / ref_energy * ref
    resid = est - target
    t_e, r_e = float(np.dot(target, target)), float(np.dot(resid, resid))
    if r_e <= 0 or t_e / r_e >= 10 ** (SI_SNR_CAP_DB / 10):
        return SI_SNR_CAP_DB
    if t_e <= 0:
        return -SI_SNR_CAP_DB
    return max(-SI_SNR_CAP_DB, 10.0 * np.log10(t_e / r_e))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    # group label per row; defaults to the row's SNR
    labels: list | None = None

    def groups(self) -> dict:
        """Mean metrics per SNR group plus an ``all`` group.

        ``delta_refined_minus_enhanced`` is negative when refinement helped.
        """
        buckets = defaultdict(list)
        labels = self.labels or [_snr_label(r["snr_db"]) for r in self.rows]
        for r, label in zip(self.rows, labels):
            buckets[label].append(r)
            buckets["all"].append(r)
        out = {}
        for label, rows in buckets.items():
            summary = {c: float(np.mean([r[c] for r in rows])) for c in REPORT_COLUMNS[2:]}
            summary["count"] = len(rows)
            summary["delta_refined_minus_enhanced"] = summary["spectral_mse_refined"] - summary["spectral_mse_enhanced"]
            out[label] = summary
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    def write_group_csv(self, path):
        groups = self.groups()
        cols = ["group", "count", *REPORT_COLUMNS[2:], "delta_refined_minus_enhanced"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for label in sorted(groups, key=_group_order):
                w.writerow({"group": label, **{k: repr(v) if isinstance(v, float) else v for k, v in groups[label].items()}})


def _snr_label(snr) -> str:
    return f"{float(snr):g}"


def _group_order(label):
    try:
        return (0, float(label), "")
    except ValueError:
        return (1 if label != "all" else 2, 0.0, label)


def evaluate_utterance(se: MaskEstimatorParams | None, dsr: DsrnetParams, mixed: Waveform, clean: Waveform, noise: Waveform, synthetic: bool = False, window_len: int = 512, hop_len: int = 128) -> dict:
    """Run the pipeline on one utterance and collect its metrics.

    Waveforms are resynthesised with the noisy phase and nonnegative magnitudes.
    ``se=None`` uses the oracle ratio mask.
    """
    cy = stft(mixed, window_len, hop_len)
    S = magnitude(stft(clean, window_len, hop_len)).frames
    N = magnitude(stft(noise, window_len, hop_len)).frames
    if synthetic:
        Y, S, N = synthetic_pair(S, N)
    else:
        Y = magnitude(cy).frames
    M = oracle_mask(S, N) if se is None else estimate_mask(se, Y)[0]
    pair = apply_mask(M, Y)
    _, refined, _ = dsrnet_forward(dsr, pair)
    dec = error_decomposition(pair, S, N).summary()
    ph = phase(cy)

    def synth(mag):
        return istft(reconstruct(np.maximum(mag, 0.0), ph, like=cy), trim=True)

    return {
        "spectral_mse_enhanced": mse(pair.s_hat, S),
        "spectral_mse_refined": mse(refined.s_tilde, S),
        "e_s_abs": dec["e_s_abs"],
        "e_n_abs": dec["e_n_abs"],
        "si_snr_noisy": si_snr(mixed, clean),
        "si_snr_enhanced": si_snr(synth(pair.s_hat), clean),
        "si_snr_refined": si_snr(synth(refined.s_tilde), clean),
    }


def evaluate(manifests, se: MaskEstimatorParams | None, dsr: DsrnetParams, synthetic: bool = False, group: str | None = None) -> EvalReport:
    """Evaluate every manifest row; rows come out sorted by ``utt_id``.

    ``group`` labels every row (e.g. ``"random"`` for a randomized-SNR test
    set); by default rows are grouped by their SNR. ``se=None`` evaluates the
    oracle ratio mask.
    """
    if se is not None and dsr.n_bins != se.n_bins:
        raise ValueError(f"estimator has {se.n_bins} bins but DSRNet has {dsr.n_bins}")
    rows = []
    for row in sorted(manifests, key=lambda r: r.utt_id):
        mixed, clean, noise = load_waveforms(row)
        metrics = evaluate_utterance(se, dsr, mixed, clean, noise, synthetic=synthetic)
        rows.append({"utt_id": row.utt_id, "snr_db": float(row.snr_db), **metrics})
    labels = [group] * len(rows) if group is not None else None
    return EvalReport(rows, labels)
