"""Mutual reinforcement of layers: boundary fusion, peak picking, LDA re-labeling."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .formats import fmt_float, write_csv
from .tokenizer import Segment, TokenLabeling

log = logging.getLogger(__name__)


def layer_boundaries(labeling: TokenLabeling) -> dict:
    """uid -> 0/1 vector over junctures 1..T-1 (index j-1 holds juncture j)."""
    out = {}
    for uid, segs in labeling.items():
        b = np.zeros(segs[-1].end - 1, dtype=np.int8)
        for s in segs[1:]:
            b[s.start - 1] = 1
        out[uid] = b
    return out


def layer_weights(psis) -> np.ndarray:
    """w proportional to m, normalised to sum to one."""
    ms = np.array([psi.m for psi in psis], dtype=np.float64)
    return ms / ms.sum()


def fuse_boundaries(per_layer: dict, psis=None) -> dict:
    """Weighted average of per-layer boundary vectors.

    per_layer maps HyperParams -> {uid: boundary vector}.
    """
    psis = sorted(per_layer) if psis is None else list(psis)
    weights = layer_weights(psis)
    uids = list(per_layer[psis[0]])
    fused = {}
    for uid in uids:
        vecs = [per_layer[psi][uid] for psi in psis]
        if len({len(v) for v in vecs}) != 1:
            raise ValueError(f"{uid}: layers disagree on the number of junctures")
        fused[uid] = np.clip(sum(w * v for w, v in zip(weights, vecs)), 0.0, 1.0)
    return fused


@dataclass
class PeakOptions:
    smooth_width: int = 3
    threshold: float = 0.4
    min_gap: int = 3


def smooth(B: np.ndarray, width: int) -> np.ndarray:
    """Centred triangular moving average; outside the utterance counts as 0."""
    if width <= 1:
        return B.astype(np.float64)
    if width % 2 == 0:
        raise ValueError("smooth_width must be odd")
    half = width // 2
    kernel = np.concatenate([np.arange(1, half + 2), np.arange(half, 0, -1)]).astype(np.float64)
    padded = np.concatenate([np.zeros(half), B, np.zeros(half)])
    return np.convolve(padded, kernel / kernel.sum(), mode="valid")


def pick_peaks(B: np.ndarray, opts: PeakOptions | None = None) -> list[int]:
    """Juncture numbers (1-based) selected as boundaries from a fused boundary vector."""
    opts = opts or PeakOptions()
    B = np.asarray(B, dtype=np.float64)
    if B.size == 0:
        return []
    S = smooth(B, opts.smooth_width)
    padded = np.concatenate([[0.0], S, [0.0]])
    left, right = padded[:-2], padded[2:]
    second = left - 2 * S + right
    shape_ok = (second < 0) | ((left < S) & (right < S))
    cand = np.flatnonzero((B > 0) & (S >= opts.threshold) & shape_ok)
    order = sorted(cand, key=lambda i: (-S[i], i))
    kept: list[int] = []
    for i in order:
        if all(abs(i - k) >= opts.min_gap for k in kept):
            kept.append(i)
    return sorted(int(i) + 1 for i in kept)


def segments_from_junctures(T: int, junctures) -> list[tuple[int, int]]:
    cuts = [0] + sorted(junctures) + [T]
    return [(a, b) for a, b in zip(cuts, cuts[1:])]


@dataclass
class SegmentDocument:
    utterance_id: str
    start: int
    end: int
    words: Counter  # (layer_index, token_id) -> count


def word_offsets(psis) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([psi.n for psi in psis])[:-1]]).astype(np.int64)


def build_documents(segments: dict, labelings: dict) -> list[SegmentDocument]:
    """One bag of (layer, token) words per new segment.

    segments: uid -> [(start, end)]; labelings: HyperParams -> TokenLabeling.
    Every layer token overlapping a segment contributes one word.
    """
    psis = sorted(labelings)
    docs = []
    for uid, spans in segments.items():
        layer_segs = [labelings[psi][uid] for psi in psis]
        for a, b in spans:
            words = Counter()
            for li, segs in enumerate(layer_segs):
                for seg in segs:
                    if seg.start < b and seg.end > a:
                        words[(li, seg.token_id)] += 1
            docs.append(SegmentDocument(uid, a, b, words))
    return docs


def flatten_words(doc: SegmentDocument, offsets) -> list[int]:
    out = []
    for (li, tok), c in sorted(doc.words.items()):
        out.extend([int(offsets[li] + tok)] * c)
    return out


@dataclass
class LdaModel:
    K: int
    alpha: float
    beta: float
    topic_word_counts: np.ndarray  # (K, V)
    doc_topic_counts: np.ndarray  # (num_docs, K)
    assignments: list  # per document, topic id of each word
    seed: int
    empty_docs: list = field(default_factory=list)

    def posterior(self) -> np.ndarray:
        """Per-document topic posterior, proportional to count + alpha."""
        post = self.doc_topic_counts + self.alpha
        post = post / post.sum(axis=1, keepdims=True)
        if self.empty_docs:
            post[self.empty_docs] = 1.0 / self.K
        return post

    def doc_topics(self) -> np.ndarray:
        return np.argmax(self.posterior(), axis=1)


def lda_gibbs(docs: list, K: int, vocab_size: int, alpha: float | None = None, beta: float = 0.01,
              iters: int = 200, seed: int = 0) -> LdaModel:
    """Collapsed Gibbs sampling for LDA. ``docs`` are lists of integer word ids."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if vocab_size < 1:
        raise ValueError("empty vocabulary")
    alpha = 50.0 / K if alpha is None else alpha
    rng = np.random.default_rng(seed)
    lengths = np.array([len(d) for d in docs], dtype=np.int64)
    words = np.array([w for d in docs for w in d], dtype=np.int64)
    doc_ids = np.repeat(np.arange(len(docs)), lengths)
    z = rng.integers(K, size=words.size).astype(np.int64)
    n_dk = np.zeros((len(docs), K), dtype=np.int64)
    n_kw = np.zeros((K, vocab_size), dtype=np.int64)
    np.add.at(n_dk, (doc_ids, z), 1)
    np.add.at(n_kw, (z, words), 1)
    n_k = n_kw.sum(axis=1)
    for _ in range(iters):
        _kernels.gibbs_sweep(words, doc_ids, z, n_dk, n_kw, n_k, float(alpha), float(beta),
                             rng.random(words.size))
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    assignments = [z[bounds[i] : bounds[i + 1]].copy() for i in range(len(docs))]
    empty = [i for i, n in enumerate(lengths) if n == 0]
    if empty:
        log.warning("%d empty documents given a uniform topic posterior", len(empty))
    return LdaModel(K, alpha, beta, n_kw, n_dk, assignments, seed, empty)


def merge_short(spans, m: int):
    """Merge spans shorter than m into their left neighbour (the first one into its right).

    Spans are (start, end, label) triples; the receiving span keeps its label.
    """
    spans = [list(s) for s in spans]
    i = 0
    while i < len(spans) and len(spans) > 1:
        a, b = spans[i][:2]
        if b - a >= m:
            i += 1
        elif i == 0:
            spans[1][0] = a
            del spans[0]
        else:
            spans[i - 1][1] = b
            del spans[i]
    return [tuple(s) for s in spans]


@dataclass
class MrOptions:
    peaks: PeakOptions = field(default_factory=PeakOptions)
    lda_iters: int = 200
    alpha: float | None = None
    beta: float = 0.01
    seed: int = 0


@dataclass
class MrResult:
    labels: dict  # HyperParams -> TokenLabeling
    fused: dict
    segments: dict
    documents: list
    lda: dict  # n -> LdaModel


def reinforce_detailed(layer_set, corpus, grid=None, opts: MrOptions | None = None) -> MrResult:
    opts = opts or MrOptions()
    labelings = layer_set.labelings()
    psis = sorted(labelings)
    lengths = {f.utterance_id: f.num_frames for f in corpus}
    per_layer = {psi: layer_boundaries(labelings[psi]) for psi in psis}
    fused = fuse_boundaries(per_layer, psis)
    segments = {uid: segments_from_junctures(lengths[uid], pick_peaks(fused[uid], opts.peaks))
                for uid in fused}
    docs = build_documents(segments, labelings)
    offsets = word_offsets(psis)
    vocab = int(sum(psi.n for psi in psis))
    flat = [flatten_words(d, offsets) for d in docs]
    ns = sorted({psi.n for psi in psis}) if grid is None else list(grid.phonetic)
    lda, topics = {}, {}
    for n in ns:
        lda[n] = lda_gibbs(flat, n, vocab, opts.alpha, opts.beta, opts.lda_iters,
                           int(np.random.SeedSequence([opts.seed, n]).generate_state(1)[0]))
        topics[n] = lda[n].doc_topics()
    labels = {}
    for psi in psis:
        tok = topics[psi.n]
        per_utt: dict[str, list] = {}
        i = 0
        for uid, spans in segments.items():
            tagged = []
            for a, b in spans:
                tagged.append((a, b, int(tok[i])))
                i += 1
            per_utt[uid] = [Segment(k, a, b) for a, b, k in merge_short(tagged, psi.m)]
        labels[psi] = TokenLabeling(per_utt)
    return MrResult(labels, fused, segments, docs, lda)


def reinforce(layer_set, corpus, grid=None, opts: MrOptions | None = None) -> dict:
    """New initial labelings for every layer (HyperParams -> TokenLabeling)."""
    return reinforce_detailed(layer_set, corpus, grid, opts).labels


def write_mr_artifacts(directory, result: MrResult, psis):
    from pathlib import Path

    directory = Path(directory)
    rows = [(uid, j + 1, fmt_float(v)) for uid, B in result.fused.items() for j, v in enumerate(B)]
    write_csv(directory / "fused.csv", ["utterance_id", "juncture", "B"], rows)
    offsets = word_offsets(psis)
    rows = []
    for d in result.documents:
        for (li, tok), c in sorted(d.words.items()):
            rows.append((d.utterance_id, d.start, d.end, int(offsets[li] + tok), c))
    write_csv(directory / "documents.csv", ["utterance_id", "start", "end", "word_id", "count"], rows)
