"""Tokenize a synthetic corpus with one (m, n) layer and look at what came out.

    python3 demos/tokenize_synthetic.py
"""

import numpy as np

from matdnn.evaluation import phone_boundary_scores
from matdnn.synth import SynthConfig, generate_corpus
from matdnn.tokenizer import HyperParams, train_layer

# one speaker, eight phones, moderate noise
cfg = SynthConfig(num_speakers=1, num_utterances=40, seed=0)
corpus = generate_corpus(cfg)
frames = sum(f.num_frames for f in corpus.features)
print(f"{len(corpus.features)} utterances, {frames} frames of dim {cfg.feature_dim}")

# 3 states per token, as many tokens as phones
hist = []
model, labels = train_layer(corpus.features, HyperParams(3, cfg.num_phones), seed=0, history=hist)
for step, it, value in hist:
    print(f"  {step:<8} iter {it}: joint log likelihood {value:12.2f}")

# the likelihood never goes down
values = np.array([v for _, _, v in hist])
print("monotone:", bool(np.all(np.diff(values) >= -1e-9 * np.abs(values[:-1]))))

# how tokens line up with phones
uid = corpus.features[0].utterance_id
print("first utterance, gold phones vs tokens:")
print("  phones:", [(a, b, p) for a, b, p in corpus.gold.phones[uid]][:6])
print("  tokens:", [(s.start, s.end, s.token_id) for s in labels.segments[uid]][:6])
prf = phone_boundary_scores(labels, corpus.gold, tol=2)
print(f"phone boundary P/R/F at +-2 frames: {prf.precision:.3f} {prf.recall:.3f} {prf.f:.3f}")

# token usage and the learned unigram
counts = np.bincount([s.token_id for _, segs in labels.items() for s in segs], minlength=cfg.num_phones)
print("segments per token:", counts.tolist())
print("token unigram:", np.round(model.token_lm, 3).tolist())
