"""Train a small grid of layers, fuse their boundaries and relabel with LDA.

    python3 demos/reinforce_layers.py
"""

import numpy as np

from matdnn.evaluation import phone_boundary_scores
from matdnn.granularity import LayerGrid, train_grid
from matdnn.reinforcement import PeakOptions, layer_weights, pick_peaks, reinforce_detailed
from matdnn.synth import SynthConfig, generate_corpus

corpus = generate_corpus(SynthConfig(num_utterances=30, seed=1))
grid = LayerGrid((3, 5), (8, 16))
ls = train_grid(corpus.features, grid, seed=1)
print("layers:", [(p.m, p.n) for p in ls.psis()])
print("boundary weights (proportional to m):", np.round(layer_weights(ls.psis()), 3).tolist())

res = reinforce_detailed(ls, corpus.features, grid)
uid = corpus.features[0].utterance_id
B = res.fused[uid]
print(f"fused boundary vector for {uid}: {len(B)} junctures, {int((B > 0).sum())} marked by some layer")
print("picked junctures:", pick_peaks(B, PeakOptions())[:12])
print("gold phone starts:", [a for a, _, _ in corpus.gold.phones[uid]][1:13])

# one LDA run per distinct token count; each fused segment gets its argmax topic
for n, lda in res.lda.items():
    topics = lda.doc_topics()
    print(f"n={n}: {len(topics)} segments over {len(set(topics.tolist()))} topics")

# the reinforced labels seed a second round of training
print("F before / after one round, per layer:")
again = train_grid(corpus.features, grid, seed=1, initial_labels=res.labels)
for psi in ls.psis():
    before = phone_boundary_scores(ls.layers[psi][1], corpus.gold).f
    after = phone_boundary_scores(again.layers[psi][1], corpus.gold).f
    print(f"  ({psi.m},{psi.n}) {before:.3f} -> {after:.3f}")
