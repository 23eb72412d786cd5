"""The M x N grid of tokenizer layers."""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import read_csv, write_csv
from .model_io import read_matm, write_matm
from .tokenizer import HyperParams, Segment, TokenLabeling, train_layer

LABEL_HEADER = ["utterance_id", "start_frame", "end_frame", "token_id"]


@dataclass(frozen=True)
class LayerGrid:
    temporal: tuple = (3, 5, 7, 9)
    phonetic: tuple = (50, 100, 300, 500)

    def __post_init__(self):
        object.__setattr__(self, "temporal", tuple(int(x) for x in self.temporal))
        object.__setattr__(self, "phonetic", tuple(int(x) for x in self.phonetic))
        for name, vals in (("temporal", self.temporal), ("phonetic", self.phonetic)):
            if not vals:
                raise ValueError(f"{name} granularities must be non-empty")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} granularities must be strictly increasing: {vals}")
        for psi in self.psis():
            HyperParams(psi.m, psi.n)

    def psis(self) -> list[HyperParams]:
        return [HyperParams(m, n) for m in self.temporal for n in self.phonetic]

    def __len__(self):
        return len(self.temporal) * len(self.phonetic)


def corpus_fingerprint(corpus) -> str:
    h = hashlib.sha256()
    for f in corpus:
        h.update(f.utterance_id.encode())
        h.update(np.asarray(f.frames.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(f.frames, dtype="<f8").tobytes())
    return h.hexdigest()


def layer_seed(seed: int, m: int, n: int) -> int:
    """Per-layer seed independent of scheduling order."""
    return int(np.random.SeedSequence([seed, m, n]).generate_state(1)[0])


@dataclass
class LayerSet:
    layers: dict  # HyperParams -> (TokenSetModel, TokenLabeling)
    fingerprint: str
    histories: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.layers = dict(sorted(self.layers.items()))

    def psis(self):
        return list(self.layers)

    def labelings(self):
        return {psi: lab for psi, (_, lab) in self.layers.items()}

    def __len__(self):
        return len(self.layers)


@dataclass
class LayerOptions:
    max_iters: int = 10
    label_change_tol: float = 0.01
    seg_len: int | None = None
    lm_weight: float = 1.0


class LayerFailure(RuntimeError):
    pass


def _train_one(args):
    corpus, psi, opts, seed, init = args
    hist = []
    try:
        model, labels = train_layer(corpus, psi, opts.max_iters, opts.label_change_tol, seed,
                                    opts.seg_len, opts.lm_weight, init, hist)
    except Exception as exc:
        raise LayerFailure(f"layer m={psi.m} n={psi.n} failed: {exc}") from exc
    return psi, model, labels, hist


def train_grid(corpus, grid: LayerGrid, opts: LayerOptions | None = None, seed: int = 0,
               initial_labels: dict | None = None, workers: int = 1) -> LayerSet:
    """Train every (m, n) layer independently; results ordered by (m, n)."""
    opts = opts or LayerOptions()
    initial_labels = initial_labels or {}
    jobs = [(corpus, psi, opts, layer_seed(seed, psi.m, psi.n), initial_labels.get(psi))
            for psi in grid.psis()]

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    layers = {psi: (model, labels) for psi, model, labels, _ in results}
    hist = {psi: h for psi, _, _, h in results}
    return LayerSet(layers, corpus_fingerprint(corpus), hist)


# -- persistence ----------------------------------------------------------------


def write_labels(path, labeling: TokenLabeling):
    rows = [(uid, s.start, s.end, s.token_id) for uid, segs in labeling.items() for s in segs]
    write_csv(path, LABEL_HEADER, rows)


def read_labels(path) -> TokenLabeling:
    segs: dict[str, list] = {}
    for uid, a, b, k in read_csv(path, LABEL_HEADER):
        segs.setdefault(uid, []).append(Segment(int(k), int(a), int(b)))
    for v in segs.values():
        v.sort(key=lambda s: s.start)
    return TokenLabeling(segs)


def layer_dirname(psi: HyperParams) -> str:
    return f"m{psi.m}_n{psi.n}"


def save_layer_set(directory, layer_set: LayerSet):
    directory = Path(directory)
    for psi, (model, labels) in layer_set.layers.items():
        d = directory / layer_dirname(psi)
        d.mkdir(parents=True, exist_ok=True)
        write_matm(d / "model.matm", model)
        write_labels(d / "labels.csv", labels)
    (directory / "fingerprint.txt").write_text(layer_set.fingerprint + "\n")


def load_layer_set(directory) -> LayerSet:
    directory = Path(directory)
    layers = {}
    for d in sorted(directory.glob("m*_n*")):
        model = read_matm(d / "model.matm")
        layers[model.psi] = (model, read_labels(d / "labels.csv"))
    if not layers:
        raise FileNotFoundError(f"no m*_n* layer directories in {directory}")
    fp = (directory / "fingerprint.txt").read_text().strip()
    return LayerSet(layers, fp)
