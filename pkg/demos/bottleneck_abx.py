"""Train a multi-target network on layer tokens and score its bottleneck with ABX.

    python3 demos/bottleneck_abx.py
"""

import numpy as np

from matdnn.evaluation import abx_error, abx_items
from matdnn.features import stack_context
from matdnn.granularity import LayerGrid, train_grid
from matdnn.mdnn import extract_bnf, frame_targets, train
from matdnn.pipeline import PipelineConfig, MdnnSettings, mdnn_input
from matdnn.synth import SynthConfig, generate_corpus

corpus = generate_corpus(SynthConfig(num_utterances=40, seed=2))
feats = corpus.features
ls = train_grid(feats, LayerGrid((3, 5), (8, 16)), seed=2)

# input: 9 stacked frames plus the utterance mean and std
cfg = PipelineConfig(mdnn=MdnnSettings(epochs=20))
inputs = mdnn_input(feats, None, cfg)
X = np.vstack([f.frames for f in inputs])
targets = frame_targets(ls)
Y = targets.stacked([f.utterance_id for f in feats])
print(f"X {X.shape}, one softmax head per layer with sizes {targets.heads}")

net = train(X, Y, cfg.mdnn.config(X.shape[1], targets.heads, seed=2))
print("loss per epoch:", np.round(net.loss_trace, 3).tolist())

bnf = [extract_bnf(net, f) for f in inputs]
items = abx_items(corpus.gold)
for name, fs in (("raw", feats), ("stacked", [stack_context(f, 4) for f in feats]), ("bottleneck", bnf)):
    res = abx_error(fs, items, "across")
    print(f"across-speaker ABX {name:<10} {res.error:6.2f}%  ({res.num_triples} triples)")
