"""Command-line entry point: ``dsrefine <subcommand> [flags]``.

Subcommands: simulate, train, eval, gradcheck, sweep, spectrogram.

A ``--config`` file (INI-style sections of ``key = value``) supplies defaults
for the subcommand of the same name; flags given on the command line always
win. Keys use the long flag name without dashes (``batch_frames`` or
``batch-frames``). Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .dsrnet import DsrnetParams, dsrnet_forward, init_dsrnet
from .enhance import MaskEstimatorParams, apply_mask, estimate_mask
from .evaluate import evaluate
from .loss import JointLossConfig
from .mixer import SNR_GRID_DB, MixSpec, load_waveforms, read_manifest, simulate_corpus
from .signal import magnitude, read_wav, stft
from .train import GRADCHECK_COMPONENTS, TrainConfig, gradcheck, load_corpus, sweep_alpha, train_joint, train_se

log = logging.getLogger("dsrefine")

GRADCHECK_LIMIT = 1e-4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def _add_train_flags(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--alpha", type=float, default=300.0)
    p.add_argument("--beta", type=float, default=100.0)
    p.add_argument("--lambda", dest="lambda_", default="dynamic", help="dynamic | fixed:<v>")
    p.add_argument("--downstream", choices=("none", "feature_proxy"), default="none")
    p.add_argument("--variant", choices=("mlp", "recurrent"), default="mlp")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-frames", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=300)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-dsrnet", action="store_true", help="train the estimator alone")
    p.add_argument("--shared-inner", action="store_true", help="share W_s/W_n across streams")
    p.add_argument("--waveform-mode", action="store_true", help="use mixture magnitudes instead of Y = S + N")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsrefine", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="sectioned key=value defaults file")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="mix clean and noise WAV pools at controlled SNRs")
    p.add_argument("--clean-dir", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--snr", default="random", help="'random' (Table-1 set), one value, or a comma list to draw from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-index", type=int, default=None, help="always use this noise file (sorted order)")

    p = sub.add_parser("train", help="train the estimator and DSRNet")
    _add_train_flags(p)
    p.add_argument("--regime", choices=("joint", "frozen"), default="joint")
    p.add_argument("--ckpt-out", required=True, help="output directory for se.ckpt, dsrnet.ckpt, trace.csv")
    p.add_argument("--se-ckpt", help="initial estimator (frozen regime pre-trains one if absent)")

    p = sub.add_parser("eval", help="evaluate checkpoints on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--se-ckpt", help="estimator checkpoint (omit with --oracle)")
    p.add_argument("--oracle", action="store_true", help="use the oracle ratio mask instead of an estimator")
    p.add_argument("--dsrnet-ckpt", help="omit for an identity (no-op) DSRNet")
    p.add_argument("--report-out", required=True)
    p.add_argument("--group", help="label all rows with this group (e.g. random)")
    p.add_argument("--synthetic", action="store_true", help="use Y = S + N")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--component", choices=(*GRADCHECK_COMPONENTS, "all"), default="all")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="alpha sweep (joint training per value)")
    _add_train_flags(p)
    p.add_argument("--values", default="1,50,100,200,300,400")
    p.add_argument("--heldout-manifest")
    p.add_argument("--out", required=True)

    p = sub.add_parser("spectrogram", help="export a spectrogram as an 8-bit grayscale image")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav")
    src.add_argument("--manifest-row", help="MANIFEST[:INDEX] (index defaults to 0)")
    p.add_argument("--stage", choices=("noisy", "clean", "enhanced", "refined"), default="noisy")
    p.add_argument("--se-ckpt")
    p.add_argument("--dsrnet-ckpt")
    p.add_argument("--out", required=True, help=".pgm or .png (a .pgm is always written too)")
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from the config file section."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("--threads")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if known.config and command in subparsers:
        cp = configparser.ConfigParser()
        if not cp.read(known.config):
            raise UsageError(f"cannot read config file {known.config}")
        if cp.has_section(command):
            sub = subparsers[command]
            by_key = {
                opt[2:].replace("-", "_"): action
                for action in sub._actions
                for opt in action.option_strings
                if opt.startswith("--")
            }
            defaults = {}
            for key, raw in cp.items(command):
                action = by_key.get(key.replace("-", "_"))
                if action is None:
                    raise UsageError(f"unknown key {key!r} in section [{command}] of {known.config}")
                if isinstance(action, argparse._StoreTrueAction):
                    defaults[action.dest] = cp.getboolean(command, key)
                else:
                    defaults[action.dest] = action.type(raw) if action.type else raw
                action.required = False
            sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# subcommands


def _train_config(args, **extra) -> tuple[TrainConfig, JointLossConfig]:
    cfg = TrainConfig(
        learning_rate=args.lr,
        warmup_steps=args.warmup,
        epochs=args.epochs,
        batch_frames=args.batch_frames,
        seed=args.seed,
        optimizer=args.optimizer,
        variant=args.variant,
        hidden=args.hidden,
        layers=args.layers,
        use_dsrnet=not args.no_dsrnet,
        shared_inner=args.shared_inner,
        synthetic=not args.waveform_mode,
        **extra,
    )
    try:
        lam = JointLossConfig.parse_lambda(args.lambda_)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    loss_cfg = JointLossConfig(alpha=args.alpha, beta=args.beta, downstream_mode=args.downstream, **lam)
    return cfg, loss_cfg


def cmd_simulate(args) -> int:
    if args.snr == "random":
        spec = MixSpec(snr_mode="randomized", seed=args.seed, snr_choices=SNR_GRID_DB)
    else:
        try:
            values = tuple(float(v) for v in args.snr.split(","))
        except ValueError as exc:
            raise UsageError(f"--snr must be 'random' or numbers, got {args.snr!r}") from exc
        if len(values) == 1:
            spec = MixSpec(snr_db=values[0], seed=args.seed)
        else:
            spec = MixSpec(snr_mode="randomized", seed=args.seed, snr_choices=values)
    if args.noise_index is not None:
        spec = replace(spec, noise_selection=args.noise_index)
    rows = simulate_corpus(args.clean_dir, args.noise_dir, spec, args.out_dir)
    path = Path(args.out_dir) / "manifest.jsonl"
    log.info("wrote %d mixtures, manifest %s", len(rows), path)
    print(path)
    return 0


def cmd_train(args) -> int:
    cfg, loss_cfg = _train_config(args, regime=args.regime)
    corpus = load_corpus(read_manifest(args.manifest), cfg.synthetic)
    se = checkpoint.load(args.se_ckpt)[0] if args.se_ckpt else None
    if args.regime == "frozen" and se is None:
        log.info("pre-training the estimator before freezing it")
        se = train_se(corpus, cfg).se
    report = train_joint(corpus, cfg, loss_cfg, se=se, ckpt_dir=args.ckpt_out)
    last = report.trace[-1] if report.trace else {}
    log.info("trained %d steps in %.1fs; last l_total=%s", len(report.trace), report.seconds, last.get("l_total"))
    print(report.checkpoint_path)
    return 0


def _load_dsrnet(path, n_bins) -> DsrnetParams:
    if path:
        return checkpoint.load(path)[0]
    return init_dsrnet(n_bins, mode="zero")


def cmd_eval(args) -> int:
    if not args.oracle and not args.se_ckpt:
        raise UsageError("eval needs --se-ckpt or --oracle")
    se = None if args.oracle else checkpoint.load(args.se_ckpt)[0]
    dsr = _load_dsrnet(args.dsrnet_ckpt, 257 if se is None else se.n_bins)
    report = evaluate(read_manifest(args.manifest), se, dsr, synthetic=args.synthetic, group=args.group)
    report.write_csv(args.report_out)
    groups_path = Path(args.report_out).with_suffix(".groups.csv")
    report.write_group_csv(groups_path)
    for label, g in sorted(report.groups().items()):
        log.info("group %s: n=%d enhanced=%.6g refined=%.6g delta=%.3g", label, g["count"],
                 g["spectral_mse_enhanced"], g["spectral_mse_refined"], g["delta_refined_minus_enhanced"])
    print(args.report_out)
    return 0


def cmd_gradcheck(args) -> int:
    comps = GRADCHECK_COMPONENTS if args.component == "all" else (args.component,)
    worst = 0.0
    for comp in comps:
        for block, err in gradcheck(comp, seed=args.seed).items():
            print(f"{comp:10s} {block:32s} {err:.3e}")
            worst = max(worst, err)
    print(f"max relative error {worst:.3e} (limit {GRADCHECK_LIMIT:g})")
    return 0 if worst <= GRADCHECK_LIMIT else 1


def cmd_sweep(args) -> int:
    cfg, loss_cfg = _train_config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --values {args.values!r}") from exc
    corpus = load_corpus(read_manifest(args.manifest), cfg.synthetic)
    heldout = load_corpus(read_manifest(args.heldout_manifest), cfg.synthetic) if args.heldout_manifest else None
    rows = sweep_alpha(values, corpus, cfg, loss_cfg, heldout=heldout, out_csv=args.out)
    for r in rows:
        log.info("alpha=%g final_proxy_loss=%.6g", r["alpha"], r["final_proxy_loss"])
    print(args.out)
    return 0


def spectrogram_image(mag: np.ndarray) -> np.ndarray:
    """``log(1 + X)`` scaled to 0..255, low frequencies at the bottom."""
    comp = np.log1p(np.maximum(mag, 0.0))
    peak = comp.max()
    scaled = comp / peak * 255.0 if peak > 0 else np.zeros_like(comp)
    return np.round(scaled).astype(np.uint8).T[::-1]


def write_pgm(path, img: np.ndarray):
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def cmd_spectrogram(args) -> int:
    if args.stage in ("enhanced", "refined") and not args.se_ckpt:
        raise RuntimeError(f"stage {args.stage!r} needs --se-ckpt")
    if args.stage == "refined" and not args.dsrnet_ckpt:
        raise RuntimeError("stage 'refined' needs --dsrnet-ckpt")
    if args.wav:
        if args.stage == "clean":
            raise UsageError("stage 'clean' needs --manifest-row")
        mixed = read_wav(args.wav)
        clean = None
    else:
        path, _, idx = args.manifest_row.partition(":")
        rows = read_manifest(path)
        mixed, clean, _ = load_waveforms(rows[int(idx or 0)])
    Y = magnitude(stft(mixed)).frames
    if args.stage == "noisy":
        mag = Y
    elif args.stage == "clean":
        mag = magnitude(stft(clean)).frames
    else:
        se: MaskEstimatorParams = checkpoint.load(args.se_ckpt)[0]
        M, _ = estimate_mask(se, Y)
        pair = apply_mask(M, Y)
        mag = pair.s_hat
        if args.stage == "refined":
            mag = dsrnet_forward(checkpoint.load(args.dsrnet_ckpt)[0], pair)[1].s_tilde
    img = spectrogram_image(mag)
    out = Path(args.out)
    pgm = out if out.suffix.lower() == ".pgm" else out.with_suffix(".pgm")
    write_pgm(pgm, img)
    if out.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:
            log.warning("Pillow not installed; wrote %s only", pgm)
        else:
            Image.fromarray(img, mode="L").save(out, format="PNG")
    print(out)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "spectrogram": cmd_spectrogram,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dsrefine: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    resolved = {k: v for k, v in sorted(vars(args).items())}
    log.info("resolved config: %s", resolved)
    limiter = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(args.threads)
    try:
        with limiter:
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dsrefine: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
