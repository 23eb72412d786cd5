"""Unsupervised acoustic token discovery for one (m, n) configuration.

A layer is trained by alternating hard-assignment re-estimation of n
left-to-right HMMs (plus a token unigram) with Viterbi re-decoding of the
corpus over a token loop, starting from a k-means segment labeling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.cluster.vq import kmeans2

from . import _kernels

log = logging.getLogger(__name__)

TRANSITION_FLOOR = 1e-4
VARIANCE_FLOOR_SCALE = 1e-3
RESCUE_NOISE = 0.01


@dataclass(frozen=True, order=True)
class HyperParams:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")


class Segment(NamedTuple):
    token_id: int
    start: int
    end: int  # exclusive


class TokenLabeling:
    """Per-utterance contiguous token segments, in corpus order."""

    def __init__(self, segments=None):
        self.segments: dict[str, list[Segment]] = {
            uid: [Segment(*s) for s in segs] for uid, segs in (segments or {}).items()
        }

    def __getitem__(self, uid):
        return self.segments[uid]

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def __eq__(self, other):
        return isinstance(other, TokenLabeling) and self.segments == other.segments

    def items(self):
        return self.segments.items()

    def frame_tokens(self, uid: str) -> np.ndarray:
        segs = self.segments[uid]
        out = np.empty(segs[-1].end, dtype=np.int64)
        for s in segs:
            out[s.start : s.end] = s.token_id
        return out

    def num_segments(self) -> int:
        return sum(len(v) for v in self.segments.values())

    def validate(self, lengths: dict[str, int], m: int, n: int | None = None):
        """Raise ValueError unless the labeling tiles each utterance with segments >= m."""
        if set(lengths) != set(self.segments):
            raise ValueError("labeling and corpus cover different utterances")
        for uid, segs in self.segments.items():
            T = lengths[uid]
            if not segs:
                raise ValueError(f"{uid}: no segments")
            if segs[0].start != 0 or segs[-1].end != T:
                raise ValueError(f"{uid}: segments do not span [0, {T})")
            for a, b in zip(segs, segs[1:]):
                if a.end != b.start:
                    raise ValueError(f"{uid}: gap or overlap at frame {a.end}")
            for s in segs:
                if s.end <= s.start:
                    raise ValueError(f"{uid}: empty segment at {s.start}")
                if n is not None and not 0 <= s.token_id < n:
                    raise ValueError(f"{uid}: token id {s.token_id} out of range")
                if s.end - s.start < m and not (len(segs) == 1 and T < m):
                    raise ValueError(f"{uid}: segment [{s.start},{s.end}) shorter than m={m}")


@dataclass
class TokenHMM:
    token_id: int
    means: np.ndarray  # (m, D)
    variances: np.ndarray  # (m, D)
    self_loop: np.ndarray  # (m,)

    @property
    def forward(self):
        return 1.0 - self.self_loop


@dataclass
class TokenSetModel:
    """n left-to-right diagonal-Gaussian HMMs plus a token unigram."""

    psi: HyperParams
    means: np.ndarray  # (n, m, D)
    variances: np.ndarray  # (n, m, D)
    self_loop: np.ndarray  # (n, m)
    token_lm: np.ndarray  # (n,)
    lm_weight: float = 1.0
    rescued: list = field(default_factory=list)

    @property
    def feature_dim(self) -> int:
        return self.means.shape[2]

    @property
    def hmms(self) -> list[TokenHMM]:
        return [
            TokenHMM(k, self.means[k], self.variances[k], self.self_loop[k])
            for k in range(self.psi.n)
        ]

    def log_transitions(self):
        with np.errstate(divide="ignore"):
            return np.log(self.self_loop), np.log1p(-self.self_loop)

    def emissions(self, frames: np.ndarray) -> np.ndarray:
        """State log densities, shape (T, n, m)."""
        n, m, D = self.means.shape
        ll = _kernels.gauss_loglik(
            np.ascontiguousarray(frames), self.means.reshape(n * m, D), self.variances.reshape(n * m, D)
        )
        return ll.reshape(len(frames), n, m)


def _lengths(corpus):
    return {f.utterance_id: f.num_frames for f in corpus}


def variance_floor(corpus) -> np.ndarray:
    allf = np.vstack([f.frames for f in corpus])
    return np.maximum(VARIANCE_FLOOR_SCALE * allf.var(axis=0), 1e-10)


def _cut(T: int, seg_len: int):
    """Fixed-length cuts of [0, T); the remainder joins the last piece."""
    if T <= seg_len:
        return [(0, T)]
    bounds = list(range(0, T - T % seg_len if T % seg_len else T, seg_len))
    pieces = [(b, b + seg_len) for b in bounds]
    pieces[-1] = (pieces[-1][0], T)
    return pieces


def initialize_labels(corpus, psi: HyperParams, seg_len: int | None = None, seed: int = 0,
                      restarts: int = 5) -> TokenLabeling:
    """Cut utterances into seg_len pieces and k-means their mean vectors into n groups."""
    seg_len = max(psi.m, 10) if seg_len is None else seg_len
    if seg_len < psi.m:
        raise ValueError(f"seg_len {seg_len} must be >= m={psi.m}")
    pieces = []
    means = []
    for f in corpus:
        for a, b in _cut(f.num_frames, seg_len):
            pieces.append((f.utterance_id, a, b))
            means.append(f.frames[a:b].mean(axis=0))
    if len(pieces) < psi.n:
        raise ValueError(
            f"corpus yields {len(pieces)} initial segments; at least n={psi.n} required"
        )
    data = np.asarray(means)
    rng = np.random.default_rng(seed)
    best, best_sse = None, np.inf
    for _ in range(restarts):
        centroids, assign = kmeans2(data, psi.n, minit="++", seed=rng, missing="warn")
        sse = float(np.sum((data - centroids[assign]) ** 2))
        if sse < best_sse:
            best, best_sse = assign, sse
    segs: dict[str, list[Segment]] = {f.utterance_id: [] for f in corpus}
    for (uid, a, b), k in zip(pieces, best):
        segs[uid].append(Segment(int(k), a, b))
    return TokenLabeling(segs)


def _uniform_states(L: int, m: int) -> np.ndarray:
    if L < m:
        return np.arange(L)
    return (np.arange(L) * m) // L


def _truncated_path_score(emis, log_adv):
    """Score of an L < m frame segment: frame i sits in state i, no exit."""
    L = emis.shape[0]
    return float(sum(emis[i, i] for i in range(L)) + sum(log_adv[i] for i in range(L - 1)))


def _segment_path(emis, log_self, log_adv):
    L, m = emis.shape
    if L < m:
        return _truncated_path_score(emis, log_adv), np.arange(L)
    score, path = _kernels.align_segment(emis, log_self, log_adv)
    return float(score), path


def estimate_models(corpus, labeling: TokenLabeling, psi: HyperParams, prev: TokenSetModel | None = None,
                    seed: int = 0, lm_weight: float = 1.0, floor: np.ndarray | None = None) -> TokenSetModel:
    """Maximum-likelihood HMM parameters for a fixed labeling.

    Frames of each segment are assigned to states by the Viterbi path under
    ``prev`` (uniform split when ``prev`` is None). Tokens with no segments
    are re-seeded from the most populated token; their indices are listed in
    ``model.rescued``.
    """
    m, n = psi.m, psi.n
    floor = variance_floor(corpus) if floor is None else floor
    D = corpus[0].dim
    if prev is not None:
        prev_self, prev_adv = prev.log_transitions()
    frames_by_state = [[[] for _ in range(m)] for _ in range(n)]
    n_self = np.zeros((n, m))
    n_adv = np.zeros((n, m))
    seg_counts = np.zeros(n)
    for f in corpus:
        emis_all = prev.emissions(f.frames) if prev is not None else None
        for seg in labeling[f.utterance_id]:
            k, a, b = seg
            L = b - a
            if prev is None:
                path = _uniform_states(L, m)
            else:
                _, path = _segment_path(emis_all[a:b, k], prev_self[k], prev_adv[k])
            seg_counts[k] += 1
            x = f.frames[a:b]
            for s in range(m):
                sel = path == s
                if sel.any():
                    frames_by_state[k][s].append(x[sel])
            same = path[1:] == path[:-1]
            np.add.at(n_self[k], path[1:][same], 1)
            np.add.at(n_adv[k], path[:-1][~same], 1)
            if L >= m:
                n_adv[k, m - 1] += 1
    means = np.zeros((n, m, D))
    variances = np.tile(floor, (n, m, 1))
    for k in range(n):
        token_frames = [blk for s in range(m) for blk in frames_by_state[k][s]]
        for s in range(m):
            if frames_by_state[k][s]:
                x = np.vstack(frames_by_state[k][s])
            elif token_frames:
                x = np.vstack(token_frames)
            else:
                continue
            means[k, s] = x.mean(axis=0)
            variances[k, s] = np.maximum(x.var(axis=0), floor)
    total = n_self + n_adv
    with np.errstate(invalid="ignore", divide="ignore"):
        self_loop = np.where(total > 0, n_self / total, 0.5)
    self_loop = np.clip(self_loop, TRANSITION_FLOOR, 1.0 - TRANSITION_FLOOR)
    token_lm = (seg_counts + 1.0) / (seg_counts.sum() + n)

    rescued = []
    dead = np.flatnonzero(seg_counts == 0)
    if dead.size:
        rng = np.random.default_rng(seed)
        donor = int(np.argmax(seg_counts))
        for k in dead:
            noise = rng.normal(0.0, 1.0, size=(m, D)) * np.sqrt(RESCUE_NOISE * variances[donor])
            means[k] = means[donor] + noise
            variances[k] = variances[donor]
            self_loop[k] = self_loop[donor]
            rescued.append(int(k))
        log.debug("rescued %d empty tokens for psi=%s", len(rescued), psi)
    return TokenSetModel(psi, means, variances, self_loop, token_lm, lm_weight, rescued)


def decode_utterance(frames: np.ndarray, model: TokenSetModel):
    """Best token segmentation of one utterance: (score, list of Segment)."""
    T = len(frames)
    m = model.psi.m
    emis = model.emissions(frames)
    log_self, log_adv = model.log_transitions()
    with np.errstate(divide="ignore"):
        entry = model.lm_weight * np.log(model.token_lm)
    if T < m:
        scores = [_truncated_path_score(emis[:, k], log_adv[k]) + entry[k] for k in range(model.psi.n)]
        k = int(np.argmax(scores))
        return float(scores[k]), [Segment(k, 0, T)]
    score, toks, starts = _kernels.decode_loop(emis, log_self, log_adv, entry)
    ends = list(starts[1:]) + [T]
    return float(score), [Segment(int(k), int(a), int(b)) for k, a, b in zip(toks, starts, ends)]


def decode(corpus, model: TokenSetModel) -> TokenLabeling:
    """Viterbi token-loop decoding of every utterance."""
    if corpus and corpus[0].dim != model.feature_dim:
        raise ValueError(f"feature dim {corpus[0].dim} != model dim {model.feature_dim}")
    return TokenLabeling({f.utterance_id: decode_utterance(f.frames, model)[1] for f in corpus})


def joint_loglik(corpus, model: TokenSetModel, labeling: TokenLabeling) -> float:
    """Sum of best state-path log likelihoods of labeled segments plus weighted LM terms."""
    log_self, log_adv = model.log_transitions()
    with np.errstate(divide="ignore"):
        entry = model.lm_weight * np.log(model.token_lm)
    total = 0.0
    for f in corpus:
        emis = model.emissions(f.frames)
        for k, a, b in labeling[f.utterance_id]:
            score, _ = _segment_path(emis[a:b, k], log_self[k], log_adv[k])
            total += score + entry[k]
    return total


def label_change(corpus, old: TokenLabeling, new: TokenLabeling) -> float:
    """Fraction of frames whose token id differs."""
    changed = total = 0
    for f in corpus:
        a, b = old.frame_tokens(f.utterance_id), new.frame_tokens(f.utterance_id)
        changed += int(np.sum(a != b))
        total += len(a)
    return changed / max(total, 1)


def train_layer(corpus, psi: HyperParams, max_iters: int = 10, label_change_tol: float = 0.01,
                seed: int = 0, seg_len: int | None = None, lm_weight: float = 1.0,
                initial_labels: TokenLabeling | None = None, history: list | None = None):
    """Alternate estimate_models / decode until labels settle.

    Returns (model, labeling). If ``history`` is a list it receives one
    record per step: ("estimate" | "decode", iteration, joint log likelihood).
    """
    if not corpus:
        raise ValueError("empty corpus")
    labels = initial_labels if initial_labels is not None else initialize_labels(corpus, psi, seg_len, seed)
    labels.validate(_lengths(corpus), psi.m, psi.n)
    floor = variance_floor(corpus)
    rng = np.random.default_rng(seed)
    model = estimate_models(corpus, labels, psi, None, int(rng.integers(2**31)), lm_weight, floor)
    if history is not None:
        history.append(("estimate", 0, joint_loglik(corpus, model, labels)))
    for it in range(1, max_iters + 1):
        new_labels = decode(corpus, model)
        if history is not None:
            history.append(("decode", it, joint_loglik(corpus, model, new_labels)))
        change = label_change(corpus, labels, new_labels)
        labels = new_labels
        log.debug("psi=%s iter %d label change %.4f", psi, it, change)
        if change < label_change_tol or it == max_iters:
            break
        model = estimate_models(corpus, labels, psi, model, int(rng.integers(2**31)), lm_weight, floor)
        if history is not None:
            history.append(("estimate", it, joint_loglik(corpus, model, labels)))
    return model, labels
