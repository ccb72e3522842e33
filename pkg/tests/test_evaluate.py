import csv

import numpy as np
import pytest

from dsrefine.dsrnet import init_dsrnet
from dsrefine.enhance import init_estimator
from dsrefine.evaluate import REPORT_COLUMNS, SI_SNR_CAP_DB, evaluate, si_snr


def test_si_snr_perfect_and_scaled(rng):
    ref = rng.standard_normal(1000)
    assert si_snr(ref, ref) == SI_SNR_CAP_DB
    assert si_snr(2 * ref, ref) == SI_SNR_CAP_DB


def test_si_snr_orthogonal_noise_is_zero_db(rng):
    ref = rng.standard_normal(1000)
    v = rng.standard_normal(1000)
    v -= np.dot(v, ref) / np.dot(ref, ref) * ref  # Gram-Schmidt
    v *= np.linalg.norm(ref) / np.linalg.norm(v)
    assert abs(np.dot(v, ref)) < 1e-9
    assert si_snr(ref + v, ref) == pytest.approx(0.0, abs=1e-9)
    # quarter-energy noise: +6.02 dB
    assert si_snr(ref + 0.5 * v, ref) == pytest.approx(10 * np.log10(4), abs=1e-9)


def test_si_snr_errors(rng):
    with pytest.raises(ValueError):
        si_snr(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        si_snr(np.ones(3), np.ones(4))


def test_identity_dsrnet_refined_equals_enhanced(small_corpus):
    _, rows = small_corpus
    se = init_estimator("mlp", 257, 8, 1, seed=0)
    report = evaluate(rows, se, init_dsrnet(257, mode="zero"))
    for r in report.rows:
        assert r["spectral_mse_refined"] == r["spectral_mse_enhanced"]
        assert r["si_snr_refined"] == r["si_snr_enhanced"]


def test_oracle_mask_synthetic_is_exact(small_corpus):
    _, rows = small_corpus
    report = evaluate(rows, None, init_dsrnet(257, mode="zero"), synthetic=True)
    assert all(r["spectral_mse_enhanced"] == 0.0 for r in report.rows)
    assert all(r["e_s_abs"] < 1e-9 and r["e_n_abs"] < 1e-9 for r in report.rows)


def test_grouping_covers_manifest_snrs(small_corpus, tmp_path):
    _, rows = small_corpus
    se = init_estimator("mlp", 257, 8, 1, seed=0)
    report = evaluate(rows, se, init_dsrnet(257, mode="zero"))
    groups = report.groups()
    assert set(groups) - {"all"} == {f"{r.snr_db:g}" for r in rows}
    assert groups["all"]["count"] == len(rows)
    assert [r["utt_id"] for r in report.rows] == sorted(r.utt_id for r in rows)
    report.write_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        assert tuple(next(csv.reader(fh))) == REPORT_COLUMNS
    labelled = evaluate(rows, se, init_dsrnet(257, mode="zero"), group="random")
    assert set(labelled.groups()) == {"random", "all"}
    labelled.write_group_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[1].startswith("random,")
    assert all(np.isfinite(v) for r in report.rows for k, v in r.items() if k != "utt_id")


def test_bin_mismatch(small_corpus):
    _, rows = small_corpus
    with pytest.raises(ValueError):
        evaluate(rows, init_estimator("mlp", 257, 4, 1), init_dsrnet(9))
