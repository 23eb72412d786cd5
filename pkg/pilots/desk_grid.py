"""Pilot for the small-corpus grid and MDNN schedule.

Runs iteration 1 of the pipeline (one reinforcement round) on the default
synthetic corpus for each seed and prints across-speaker ABX for the stacked
input, the bottleneck features and a topline MDNN trained on gold phone labels
with the same input and settings. Use held-out seeds (not 0-4) when choosing
settings.

    python3 pilots/desk_grid.py --seeds 10-19 --set mdnn.epochs=40
"""

import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from matdnn.evaluation import abx_error, abx_items
from matdnn.features import stack_context
from matdnn.mdnn import extract_bnf, train
from matdnn.pipeline import desk_config, mdnn_input, run_pipeline
from matdnn.synth import SynthConfig, generate_corpus, write_corpus


def topline(feats, gold, cfg):
    inputs = mdnn_input(feats, None, cfg)
    syms = sorted({s for segs in gold.phones.values() for _, _, s in segs})
    X = np.vstack([f.frames for f in inputs])
    Y = np.concatenate([[syms.index(s)] * (e - b) for f in feats
                        for b, e, s in gold.phones[f.utterance_id]])[:, None]
    net = train(X, Y, cfg.mdnn.config(X.shape[1], [len(syms)], cfg.seed))
    return [extract_bnf(net, f) for f in inputs]


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", default="10-19")
    p.add_argument("--set", action="append", default=[], help="config override key=value")
    args = p.parse_args()
    lo, hi = (int(x) for x in args.seeds.split("-"))
    overrides = dict(kv.split("=", 1) for kv in args.set)
    work = Path(tempfile.mkdtemp())
    for seed in range(lo, hi + 1):
        t0 = time.perf_counter()
        corpus = generate_corpus(SynthConfig(seed=seed))
        write_corpus(work / f"c{seed}", corpus)
        cfg = desk_config(corpus=str(work / f"c{seed}"), output=str(work / f"r{seed}"), iterations=1,
                          mr_rounds=1, seed=seed, **{"eval.abx": False, "eval.std": False, **overrides})
        state = run_pipeline(cfg)
        items = abx_items(corpus.gold)
        raw = abx_error([stack_context(f, cfg.context) for f in state.initial], items, "across").error
        bnf = abx_error(state.iterations[0].bnf, items, "across").error
        top = abx_error(topline(state.initial, corpus.gold, cfg), items, "across").error
        print(f"seed {seed}: raw stacked {raw:.3f}  BNF {bnf:.3f}  topline {top:.3f}  "
              f"({time.perf_counter() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
