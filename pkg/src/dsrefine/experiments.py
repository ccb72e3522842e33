"""Desk-scale experiments: the three-way ablation and the alpha sweep.

Both run on a synthetic corpus written by :func:`desk_corpus`, so they need no
external data. Everything is seeded; reruns into the same directory reproduce
manifests, traces and reports byte for byte.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .dsrnet import init_dsrnet
from .evaluate import evaluate
from .loss import JointLossConfig
from .mixer import MixSpec, simulate_corpus
from .synth import write_pools
from .train import TrainConfig, sweep_alpha, train_joint

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ("config", "description", "heldout_mse_enhanced", "heldout_mse_refined", "steps")
SWEEP_ALPHAS = (1.0, 50.0, 100.0, 200.0, 300.0, 400.0)


@dataclass(frozen=True)
class DeskCorpusConfig:
    n_train: int = 60
    n_test: int = 20
    seconds: float = 1.0
    seed: int = 1


def desk_corpus(root, cfg: DeskCorpusConfig = DeskCorpusConfig()):
    """Write train/test pools and randomized-SNR mixtures under ``root``.

    Returns ``(train_rows, test_rows)``. Train and test draw clean signals from
    different generator seeds, so the test set is genuinely held out.
    """
    root = Path(root)
    out = []
    for split, n, offset in (("train", cfg.n_train, 0), ("test", cfg.n_test, 1)):
        clean, noise = write_pools(root / f"pools_{split}", n, seed=2 * cfg.seed + offset, seconds=cfg.seconds)
        spec = MixSpec(snr_mode="randomized", seed=cfg.seed * 100 + offset)
        out.append(simulate_corpus(clean, noise, spec, root / f"mix_{split}"))
    return tuple(out)


def ablation_configs(epochs: int = 5, seed: int = 0):
    """The three configurations, sharing every seed and hyperparameter.

    (a) estimator only; (b) estimator plus DSRNet with the refine loss switched
    off; (c) estimator plus DSRNet with beta=100 and the dynamic weight.
    """
    base = TrainConfig(epochs=epochs, seed=seed)
    return (
        ("a", "SE only", replace(base, use_dsrnet=False), JointLossConfig(beta=0.0)),
        ("b", "SE+DSRNet beta=0", base, JointLossConfig(beta=0.0)),
        ("c", "SE+DSRNet beta=100 dynamic lambda", base, JointLossConfig(beta=100.0, lambda_mode="dynamic")),
    )


def run_ablation(train_rows, test_rows, out_dir, epochs: int = 5, seed: int = 0) -> list[dict]:
    """Train (a), (b), (c) and score each on the held-out rows.

    Writes ``<config>/trace.csv``, ``<config>/report.csv`` and ``ablation.csv``
    under ``out_dir``. For (a) the refined column equals the enhanced one,
    since a zero DSRNet is a no-op.
    """
    out_dir = Path(out_dir)
    results = []
    for name, desc, cfg, loss_cfg in ablation_configs(epochs, seed):
        report = train_joint(train_rows, cfg, loss_cfg, ckpt_dir=out_dir / name)
        dsr = report.dsrnet if report.dsrnet is not None else init_dsrnet(report.se.n_bins, mode="zero")
        ev = evaluate(test_rows, report.se, dsr, synthetic=cfg.synthetic)
        ev.write_csv(out_dir / name / "report.csv")
        summary = ev.groups()["all"]
        row = {
            "config": name,
            "description": desc,
            "heldout_mse_enhanced": summary["spectral_mse_enhanced"],
            "heldout_mse_refined": summary["spectral_mse_refined"],
            "steps": len(report.trace),
        }
        log.info("ablation %s: %s", name, row)
        results.append(row)
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return results


def run_sweep(train_rows, test_rows, out_csv, alphas=SWEEP_ALPHAS, epochs: int = 2, seed: int = 0) -> list[dict]:
    """Alpha sweep with the feature proxy as the downstream objective.

    The DSRNet is left out: with a single enhancement term next to the proxy,
    alpha sets the balance between the two objectives.
    """
    cfg = TrainConfig(epochs=epochs, seed=seed, use_dsrnet=False)
    loss_cfg = JointLossConfig(beta=0.0, downstream_mode="feature_proxy")
    return sweep_alpha(alphas, train_rows, cfg, loss_cfg, heldout=test_rows, out_csv=out_csv)
