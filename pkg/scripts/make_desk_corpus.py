"""Write the synthetic desk corpus (train and held-out mixtures) to a directory."""

import argparse
import logging

from dsrefine.experiments import DeskCorpusConfig, desk_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--n-train", type=int, default=60)
    ap.add_argument("--n-test", type=int, default=20)
    ap.add_argument("--seconds", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = DeskCorpusConfig(args.n_train, args.n_test, args.seconds, args.seed)
    train, test = desk_corpus(args.out_dir, cfg)
    print(f"{len(train)} train and {len(test)} test mixtures under {args.out_dir}")
    print(f"train manifest: {args.out_dir}/mix_train/manifest.jsonl")
    print(f"test manifest:  {args.out_dir}/mix_test/manifest.jsonl")


if __name__ == "__main__":
    main()
