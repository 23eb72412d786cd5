"""Command-line entry point: ``matdnn <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .evaluation import abx_error, abx_items, read_annotation, track2_report
from .features import compute_mfcc, MfccConfig
from .formats import FormatError, fmt_float, read_feature_dir, read_wav, write_csv, write_feature_dir
from .granularity import (LayerGrid, LayerOptions, LayerSet, corpus_fingerprint, load_layer_set,
                          read_labels, save_layer_set, train_grid, write_labels, layer_dirname)
from .mdnn import extract_bnf, frame_targets, train
from .model_io import read_matn, write_matn
from .pipeline import (ConfigMismatch, PipelineConfig, MdnnSettings, TRACK2_HEADER, load_config, mdnn_input,
                       run_pipeline, validate_run)
from .reinforcement import MrOptions, PeakOptions, reinforce_detailed, write_mr_artifacts
from .synth import SynthConfig, generate_corpus, write_corpus
from .tokenizer import HyperParams, train_layer


def _ints(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


def cmd_synth(args):
    cfg = SynthConfig(num_phones=args.phones, feature_dim=args.dim, phone_noise_std=args.noise,
                      speaker_offset_std=args.speaker_offset, num_speakers=args.speakers,
                      num_utterances=args.utterances, trajectory=args.trajectory, seed=args.seed)
    corpus = generate_corpus(cfg)
    write_corpus(args.out, corpus)
    frames = sum(f.num_frames for f in corpus.features)
    print(f"wrote {len(corpus.features)} utterances ({frames} frames) to {args.out}")


def cmd_features(args):
    out = []
    for wav in sorted(Path(args.wav_dir).glob("*.wav")):
        spk = wav.stem.split(args.speaker_sep)[0] if args.speaker_sep else ""
        out.append(compute_mfcc(read_wav(wav, speaker_id=spk), MfccConfig()))
    if not out:
        raise SystemExit(f"no .wav files in {args.wav_dir}")
    write_feature_dir(args.out, out)
    print(f"wrote {len(out)} feature files to {args.out}")


def cmd_tokenize(args):
    corpus = read_feature_dir(args.features)
    psi = HyperParams(args.m, args.n)
    init = read_labels(args.init) if args.init else None
    hist = []
    model, labels = train_layer(corpus, psi, args.max_iters, args.label_change_tol, args.seed,
                                args.seg_len, args.lm_weight, init, hist)
    out = Path(args.out)
    save_layer_set(out, LayerSet({psi: (model, labels)}, corpus_fingerprint(corpus)))
    print(f"psi=({psi.m},{psi.n}): {labels.num_segments()} segments after {len(hist)} steps, "
          f"joint log-likelihood {hist[-1][2]:.2f}")


def cmd_tokenize_grid(args):
    corpus = read_feature_dir(args.features)
    grid = LayerGrid(_ints(args.temporal), _ints(args.phonetic))
    ls = train_grid(corpus, grid, LayerOptions(args.max_iters), args.seed, workers=args.threads)
    save_layer_set(args.out, ls)
    print(f"trained {len(ls)} layers into {args.out}")


def cmd_reinforce(args):
    corpus = read_feature_dir(args.features)
    ls = load_layer_set(args.layers)
    opts = MrOptions(PeakOptions(args.smooth_width, args.threshold, args.min_gap),
                     args.lda_iters, seed=args.seed)
    res = reinforce_detailed(ls, corpus, None, opts)
    out = Path(args.out)
    write_mr_artifacts(out, res, ls.psis())
    for psi, lab in res.labels.items():
        write_labels(out / "labels" / f"{layer_dirname(psi)}.csv", lab)
    print(f"{sum(len(v) for v in res.segments.values())} fused segments, "
          f"{len(res.lda)} LDA runs, new labels in {out / 'labels'}")


def _tandem(args):
    corpus = read_feature_dir(args.features)
    bnf = read_feature_dir(args.bnf, "bottleneck") if args.bnf else None
    cfg = PipelineConfig(context=args.context, summary=not args.no_summary)
    return mdnn_input(corpus, bnf, cfg)


def cmd_train_mdnn(args):
    inputs = _tandem(args)
    ls = load_layer_set(args.layers)
    targets = frame_targets(ls)
    X = np.vstack([f.frames for f in inputs])
    Y = targets.stacked([f.utterance_id for f in inputs])
    settings = MdnnSettings(hidden=_ints(args.hidden), bottleneck=args.bottleneck,
                            learn_rate=args.learn_rate, epochs=args.epochs, batch_size=args.batch_size)
    net = train(X, Y, settings.config(X.shape[1], targets.heads, args.seed))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_matn(args.out, net)
    print(f"loss {net.loss_trace[0]:.4f} -> {net.loss_trace[-1]:.4f}; model in {args.out}")


def cmd_extract_bnf(args):
    net = read_matn(args.model)
    bnf = [extract_bnf(net, f) for f in _tandem(args)]
    write_feature_dir(args.out, bnf)
    print(f"wrote {len(bnf)} bottleneck files ({bnf[0].dim} dims) to {args.out}")


def cmd_eval_abx(args):
    feats = read_feature_dir(args.features)
    gold = read_annotation(args.annotation)
    items = abx_items(gold, not args.no_context)
    modes = ("across", "within") if args.mode == "both" else (args.mode,)
    for mode in modes:
        res = abx_error(feats, items, mode, args.cap, args.seed)
        print(f"{mode}: {res.error:.2f}% over {res.num_triples} triples "
              f"({res.num_cells} cells, {res.skipped_cells} skipped)")


def cmd_eval_std(args):
    gold = read_annotation(args.annotation)
    labels = read_labels(args.labels)
    rep = track2_report(labels, gold, args.tol)
    for k in TRACK2_HEADER[3:]:
        print(f"{k:<12}{rep[k] if k in ('NED', 'Cov.') else 100 * rep[k]:8.2f}")
    if args.out:
        write_csv(args.out, TRACK2_HEADER[3:], [[fmt_float(rep[k]) for k in TRACK2_HEADER[3:]]])


def cmd_run(args):
    cfg = load_config(args.config)
    workers = 1 if args.deterministic else max(1, args.threads)
    state = run_pipeline(cfg, resume=args.resume, workers=workers)
    print((state.path("reports", "summary.txt")).read_text(), end="")


def cmd_validate(args):
    problems = validate_run(args.run_dir)
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return 1 if problems else 0


def build_parser():
    p = argparse.ArgumentParser(prog="matdnn", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--phones", type=int, default=8)
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--speaker-offset", type=float, default=0.8)
    s.add_argument("--speakers", type=int, default=3)
    s.add_argument("--utterances", type=int, default=60)
    s.add_argument("--trajectory", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("features", help="MFCC features from 16-bit mono WAV files")
    s.add_argument("--wav-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--speaker-sep", default="_", help="speaker id = file stem up to this separator")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("tokenize", help="train one tokenizer layer, or a grid with --temporal/--phonetic")
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--m", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--temporal", help="grid m values, e.g. 3,5")
    s.add_argument("--phonetic", help="grid n values, e.g. 4,8")
    s.add_argument("--init", help="initial labels CSV")
    s.add_argument("--max-iters", type=int, default=10)
    s.add_argument("--label-change-tol", type=float, default=0.01)
    s.add_argument("--seg-len", type=int)
    s.add_argument("--lm-weight", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=lambda a: cmd_tokenize_grid(a) if a.temporal else cmd_tokenize(a))

    s = sub.add_parser("reinforce", help="one mutual-reinforcement round over a layer directory")
    s.add_argument("--features", required=True)
    s.add_argument("--layers", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--smooth-width", type=int, default=3)
    s.add_argument("--threshold", type=float, default=0.4)
    s.add_argument("--min-gap", type=int, default=3)
    s.add_argument("--lda-iters", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_reinforce)

    for name, func in (("train-mdnn", cmd_train_mdnn), ("extract-bnf", cmd_extract_bnf)):
        s = sub.add_parser(name)
        s.add_argument("--features", required=True)
        s.add_argument("--bnf", help="previous-iteration BNF directory to tandem in")
        s.add_argument("--context", type=int, default=4)
        s.add_argument("--no-summary", action="store_true")
        s.add_argument("--out", required=True)
        if name == "train-mdnn":
            s.add_argument("--layers", required=True)
            s.add_argument("--hidden", default="256,256")
            s.add_argument("--bottleneck", type=int, default=39)
            s.add_argument("--learn-rate", type=float, default=0.1)
            s.add_argument("--epochs", type=int, default=20)
            s.add_argument("--batch-size", type=int, default=128)
            s.add_argument("--seed", type=int, default=0)
        else:
            s.add_argument("--model", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("eval-abx", help="ABX error of a feature directory")
    s.add_argument("--features", required=True)
    s.add_argument("--annotation", required=True)
    s.add_argument("--mode", choices=("across", "within", "both"), default="both")
    s.add_argument("--cap", type=int, default=50)
    s.add_argument("--no-context", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval_abx)

    s = sub.add_parser("eval-std", help="Track 2 scores of a labels CSV")
    s.add_argument("--labels", required=True)
    s.add_argument("--annotation", required=True)
    s.add_argument("--tol", type=int, default=2)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_std)

    s = sub.add_parser("run", help="full pipeline from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--deterministic", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("validate", help="re-parse every artifact in a run directory")
    s.add_argument("run_dir")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "tokenize" and not args.temporal and (args.m is None or args.n is None):
        raise SystemExit("tokenize needs --m and --n, or --temporal and --phonetic")
    try:
        return args.func(args) or 0
    except (ConfigMismatch, FormatError, FileNotFoundError, ValueError) as exc:
        print(f"matdnn {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
