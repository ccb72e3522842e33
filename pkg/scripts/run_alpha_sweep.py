"""Sweep the enhancement-loss weight alpha and tabulate the held-out feature proxy loss."""

import argparse
import logging
from pathlib import Path

from dsrefine.experiments import SWEEP_ALPHAS, DeskCorpusConfig, desk_corpus, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--alphas", default=",".join(f"{a:g}" for a in SWEEP_ALPHAS))
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    train, test = desk_corpus(out / "corpus", DeskCorpusConfig())
    alphas = [float(a) for a in args.alphas.split(",")]
    for r in run_sweep(train, test, out / "alpha_sweep.csv", alphas, args.epochs, args.seed):
        print(f"alpha={r['alpha']:>6g}  proxy={r['final_proxy_loss']:.3f}")


if __name__ == "__main__":
    main()
