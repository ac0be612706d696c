"""Command-line interface.

Subcommands: gen-corpus, ingest, train, degrade, recover, baseline,
segment, evaluate, sweep {cr|noise|restart|correlation|blur|occlusion},
timing, report.  Exit code is 0 only when no per-image failures occurred.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import configfile, obsfile, pngio
from .baselines import BaselineConfig, solve
from .corpus import CorpusConfig, generate_corpus, ingest_directory, load_corpus, save_corpus
from .gan import GanTrainConfig, train
from .modelfile import load_model, save_model
from .operators import NoiseModel, degrade, format_descriptor, parse_descriptor
from .recovery import RecoveryConfig, recover
from .rng import Prng, derive_seed
from .segmentation import SegmenterParams, confusion, metrics, segment
from .sweeps import (
    make_context,
    run_blur_study,
    run_cr_sweep,
    run_loss_correlation,
    run_noise_sweep,
    run_occlusion_study,
    run_restart_study,
    sort_report,
    timing_report,
)


def _add_common(parser, require_out=False):
    parser.add_argument("--config", help="configuration file for this command")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", required=require_out, help="output file or directory")
    parser.add_argument("--threads", type=int, default=1, help="worker budget (runs serially)")


def _corpus_config(args):
    values = (
        configfile.load_config(args.config, configfile.CORPUS_SCHEMA)
        if args.config
        else configfile.parse_config_text("", configfile.CORPUS_SCHEMA)
    )
    if args.seed is not None:
        values["master_seed"] = args.seed
    return CorpusConfig(**values)


def _cmd_gen_corpus(args):
    config = _corpus_config(args)
    corpus = generate_corpus(config)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.train)} train + {len(corpus.validation)} validation samples to {args.out}")
    return 0


def _cmd_ingest(args):
    config = _corpus_config(args)
    corpus = ingest_directory(args.indir, config)
    save_corpus(corpus, args.out)
    print(f"ingested {len(corpus.train)} images to {args.out}")
    return 0


def _cmd_train(args):
    values = (
        configfile.load_config(args.config, configfile.GAN_SCHEMA)
        if args.config
        else configfile.parse_config_text("", configfile.GAN_SCHEMA)
    )
    if args.seed is not None:
        values["seed"] = args.seed
    config = GanTrainConfig(**values)
    corpus = load_corpus(args.corpus)
    result = train(corpus, config)
    metadata = {
        "train_seconds": repr(result.train_seconds),
        "corpus_seed": corpus.config.master_seed,
        "epochs": config.epochs,
        "minibatch": config.minibatch,
        "seed": config.seed,
        "loss_variant": config.loss_variant,
    }
    save_model(args.out, result.generator, result.discriminator, metadata)
    loss_csv = args.loss_csv or os.path.splitext(args.out)[0] + "_losses.csv"
    with open(loss_csv, "w", encoding="utf-8") as fh:
        fh.write("step,d_loss,g_loss\n")
        for step, d_loss, g_loss in result.history:
            fh.write(f"{step},{d_loss!r},{g_loss!r}\n")
    print(
        f"trained {result.d_steps} D steps / {result.g_steps} G steps in "
        f"{result.train_seconds:.1f}s; model -> {args.out}, losses -> {loss_csv}"
    )
    return 0


def _cmd_degrade(args):
    image = pngio.load_image(args.infile)
    operator, noise = parse_descriptor(args.operator, image.shape)
    prng = Prng(args.seed if args.seed is not None else 0)
    obs = degrade(operator, image, noise, prng)
    obsfile.save_observation(args.out, obs, format_descriptor(operator, noise), image.shape)
    print(f"degraded {args.infile} -> {args.out} ({operator.kind})")
    return 0


def _cmd_recover(args):
    obs, descriptor, image_shape = obsfile.load_observation(args.infile)
    if args.operator:
        descriptor = args.operator
    operator, _ = parse_descriptor(descriptor, image_shape)
    bundle = load_model(args.model)
    generator = bundle.generator
    generator.net.set_mode("infer")
    config = RecoveryConfig(
        restarts=args.restarts,
        iterations=args.iterations,
        lam=args.penalty,
        seed=args.seed if args.seed is not None else 0,
        record_trace=args.trace is not None,
    )
    result = recover(generator, operator, obs, config)
    pngio.save_image(args.out, result.reconstruction)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("restart,iteration,L,L_c,L_p\n")
            for r, trace in enumerate(result.traces):
                for it, (total, l_c, l_p) in enumerate(trace):
                    fh.write(f"{r},{it},{total!r},{l_c!r},{l_p!r}\n")
    print(f"recovered {args.infile} -> {args.out} (L_min={result.loss_min:.6g})")
    return 0


def _cmd_baseline(args):
    obs, descriptor, image_shape = obsfile.load_observation(args.infile)
    if args.operator:
        descriptor = args.operator
    operator, _ = parse_descriptor(descriptor, image_shape)
    config = BaselineConfig(
        method=args.method,
        sparsity=args.k,
        l1_weight=args.l1,
        iterations=args.iterations,
    )
    image, _, residual = solve(args.method, operator, obs, config)
    pngio.save_image(args.out, image)
    print(f"{args.method} reconstruction -> {args.out} (residual={residual:.6g})")
    return 0


def _cmd_segment(args):
    values = (
        configfile.load_config(args.params, configfile.SEGMENTER_SCHEMA)
        if args.params
        else configfile.parse_config_text("", configfile.SEGMENTER_SCHEMA)
    )
    params = SegmenterParams(**values)
    mask = segment(pngio.load_image(args.infile), params)
    pngio.save_mask(args.out, mask)
    print(f"segmented {args.infile} -> {args.out} ({int(mask.sum())} crack pixels)")
    return 0


def _cmd_evaluate(args):
    pred = pngio.load_mask(args.pred)
    truth = pngio.load_mask(args.truth)
    report = metrics(confusion(pred, truth))
    print("accuracy,precision,recall,f1")
    print(f"{report.accuracy!r},{report.precision!r},{report.recall!r},{report.f1!r}")
    return 0


def _experiment_context(args):
    config = configfile.load_config(args.config, configfile.EXPERIMENT_SCHEMA)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out:
        config["out_dir"] = args.out
    return make_context(config)


def _cmd_sweep(args):
    ctx = _experiment_context(args)
    runner = {
        "cr": run_cr_sweep,
        "noise": run_noise_sweep,
        "restart": run_restart_study,
        "correlation": run_loss_correlation,
        "blur": run_blur_study,
        "occlusion": run_occlusion_study,
    }[args.kind]
    if args.kind == "correlation":
        rows, corr = runner(ctx)
        for key, value in corr.items():
            print(f"{key} = {value}")
        print(f"{len(rows)} trials -> {ctx.out_dir}")
        return 0
    rows, failures = runner(ctx)
    print(f"{args.kind} sweep: {len(rows)} rows, {len(failures)} failures -> {ctx.out_dir}")
    return 0 if not failures else 1


def _cmd_timing(args):
    ctx = _experiment_context(args)
    for method, count, mean_wall in timing_report(ctx):
        print(f"{method}: {mean_wall:.3f}s mean over {count} images")
    print(f"gan training: {ctx.train_seconds:.1f}s (once)")
    return 0


def _cmd_report(args):
    sort_report(args.infile)
    print(f"canonicalized {args.infile}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="crackcs", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic crack corpus")
    _add_common(p, require_out=True)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("ingest", help="ingest an image directory via bilinear resize")
    _add_common(p, require_out=True)
    p.add_argument("--in", dest="indir", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train the adversarial model on a corpus")
    _add_common(p, require_out=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--loss-csv", dest="loss_csv")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("degrade", help="apply an operator descriptor to an image")
    _add_common(p, require_out=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--operator", required=True)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("recover", help="latent-space recovery of an observation")
    _add_common(p, require_out=True)
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--operator", help="override the descriptor stored in the observation")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--penalty", type=float, default=0.001)
    p.add_argument("--trace", help="per-iteration loss trace CSV")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("baseline", help="sparse-recovery baseline on an observation")
    _add_common(p, require_out=True)
    p.add_argument("--method", choices=("omp", "cosamp", "ista"), required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--operator")
    p.add_argument("--k", type=int)
    p.add_argument("--l1", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=500)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("segment", help="binary crack segmentation of an image")
    _add_common(p, require_out=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--params", help="segmenter parameter file")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("evaluate", help="score a predicted mask against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="run a study end to end")
    p.add_argument("kind", choices=("cr", "noise", "restart", "correlation", "blur", "occlusion"))
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("timing", help="per-method mean wall time report")
    _add_common(p)
    p.set_defaults(func=_cmd_timing)

    p = sub.add_parser("report", help="canonicalize a report CSV row order")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
