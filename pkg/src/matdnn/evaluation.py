"""Track 1 (ABX over DTW) and Track 2 (unit discovery) metrics against gold annotations."""

from __future__ import annotations

import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from . import _kernels
from .formats import read_csv, write_csv

ANNOTATION_HEADER = ["utterance_id", "tier", "start_frame", "end_frame", "symbol", "speaker_id"]
EDGE = "#"


@dataclass
class Annotation:
    """Gold phone and word tiers: uid -> [(start, end, symbol)], plus speakers."""

    phones: dict
    words: dict
    speakers: dict

    def validate(self):
        for tier_name, tier in (("phone", self.phones), ("word", self.words)):
            for uid, segs in tier.items():
                for (a0, a1, _), (b0, _, _) in zip(segs, segs[1:]):
                    if a1 != b0:
                        raise ValueError(f"{uid}: {tier_name} tier not contiguous at {a1}")
        for uid, wsegs in self.words.items():
            edges = {s for s, _, _ in self.phones[uid]} | {e for _, e, _ in self.phones[uid]}
            for s, e, sym in wsegs:
                if s not in edges or e not in edges:
                    raise ValueError(f"{uid}: word {sym} not aligned to phone boundaries")

    def num_frames(self, uid) -> int:
        return self.phones[uid][-1][1]


def write_annotation(path, gold: Annotation):
    rows = []
    for uid in gold.phones:
        spk = gold.speakers.get(uid, "")
        rows += [(uid, "phone", s, e, sym, spk) for s, e, sym in gold.phones[uid]]
        rows += [(uid, "word", s, e, sym, spk) for s, e, sym in gold.words.get(uid, [])]
    write_csv(path, ANNOTATION_HEADER, rows)


def read_annotation(path) -> Annotation:
    phones, words, speakers = defaultdict(list), defaultdict(list), {}
    for uid, tier, s, e, sym, spk in read_csv(path, ANNOTATION_HEADER):
        if tier not in ("phone", "word"):
            raise ValueError(f"{path}: unknown tier {tier!r}")
        (phones if tier == "phone" else words)[uid].append((int(s), int(e), sym))
        speakers[uid] = spk
    for tier in (phones, words):
        for segs in tier.values():
            segs.sort()
    return Annotation(dict(phones), dict(words), speakers)


class PRF(NamedTuple):
    precision: float
    recall: float
    f: float


def prf(hits_p, n_pred, hits_r, n_ref) -> PRF:
    p = hits_p / n_pred if n_pred else 0.0
    r = hits_r / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p > 0 and r > 0 else 0.0
    return PRF(p, r, f)


# -- Track 1 --------------------------------------------------------------------


def cosine_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 - cosine similarity; a zero frame costs 0 against zero and 1 against anything else."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    za, zb = na == 0, nb == 0
    sim = (a @ b.T) / np.outer(np.where(za, 1.0, na), np.where(zb, 1.0, nb))
    cost = 1.0 - np.clip(sim, -1.0, 1.0)
    cost[za[:, None] | zb[None, :]] = 1.0
    cost[za[:, None] & zb[None, :]] = 0.0
    return cost


def dtw_divergence(a, b) -> float:
    """Path-length-normalised DTW with cosine frame cost."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0 or a.size == 0 or b.size == 0:
        raise ValueError("dtw_divergence needs non-empty sequences")
    total, length = _kernels.dtw_accumulate(cosine_cost(a, b))
    return float(total / length)


@dataclass(frozen=True)
class AbxItem:
    utterance_id: str
    start: int
    end: int
    phone: str
    context: tuple
    speaker_id: str


def abx_items(gold: Annotation, use_context: bool = True) -> list[AbxItem]:
    """One item per gold phone; context is (previous phone, next phone)."""
    items = []
    for uid, segs in gold.phones.items():
        syms = [EDGE] + [s for _, _, s in segs] + [EDGE]
        for i, (s, e, sym) in enumerate(segs):
            ctx = (syms[i], syms[i + 2]) if use_context else (EDGE, EDGE)
            items.append(AbxItem(uid, s, e, sym, ctx, gold.speakers.get(uid, "")))
    return items


@dataclass
class AbxResult:
    error: float  # percent
    num_triples: int
    num_cells: int
    skipped_cells: int
    per_pair: dict = field(default_factory=dict, repr=False)


def _pick_triples(pools, cap, rng, distinct_ax):
    a_pool, b_pool, x_pool = pools
    combos = [
        (a, b, x) for a in a_pool for b in b_pool for x in x_pool if not (distinct_ax and a == x)
    ]
    if len(combos) > cap:
        keep = np.sort(rng.choice(len(combos), size=cap, replace=False))
        combos = [combos[i] for i in keep]
    return combos


def abx_error(features, items: list[AbxItem], mode: str = "within", cap: int = 50, seed: int = 0) -> AbxResult:
    """ABX error percentage.

    A triple (A, B, X) with X of A's phone scores 1 when d(X, B) < d(X, A)
    and 0.5 on ties. Scores are averaged over triples, then contexts, then
    speaker cells, then ordered phone pairs.
    """
    if mode not in ("within", "across"):
        raise ValueError(f"mode must be 'within' or 'across', got {mode!r}")
    if not isinstance(features, dict):
        features = {f.utterance_id: f.frames for f in features}
    segs = []
    for it in items:
        frames = features[it.utterance_id]
        if not 0 <= it.start < it.end <= len(frames):
            raise ValueError(f"item {it} outside utterance bounds")
        segs.append(frames[it.start : it.end])
    cells = defaultdict(list)
    for idx, it in enumerate(items):
        cells[(it.context, it.phone, it.speaker_id)].append(idx)
    by_context = defaultdict(lambda: defaultdict(dict))
    for (ctx, ph, spk), idxs in cells.items():
        by_context[ctx][ph][spk] = idxs

    rng = np.random.default_rng(seed)
    cache = {}

    def dist(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in cache:
            cache[key] = dtw_divergence(segs[key[0]], segs[key[1]])
        return cache[key]

    # scores[(p, q)][speaker cell][context] = mean triple score
    scores = defaultdict(lambda: defaultdict(dict))
    n_triples = n_cells = skipped = 0
    for ctx in sorted(by_context):
        phones = by_context[ctx]
        for p, q in itertools.permutations(sorted(phones), 2):
            for s in sorted(phones[p]):
                if s not in phones[q]:
                    continue
                a_pool, b_pool = phones[p][s], phones[q][s]
                if mode == "within":
                    cell_list = [((s,), (a_pool, b_pool, a_pool))]
                    if len(a_pool) < 2:
                        skipped += 1
                        continue
                else:
                    cell_list = [((s, s2), (a_pool, b_pool, phones[p][s2]))
                                 for s2 in sorted(phones[p]) if s2 != s]
                for cell, pools in cell_list:
                    triples = _pick_triples(pools, cap, rng, mode == "within")
                    if not triples:
                        skipped += 1
                        continue
                    vals = []
                    for a, b, x in triples:
                        dxa, dxb = dist(x, a), dist(x, b)
                        vals.append(1.0 if dxb < dxa else 0.5 if dxb == dxa else 0.0)
                    scores[(p, q)][cell][ctx] = float(np.mean(vals))
                    n_triples += len(vals)
                    n_cells += 1
    per_pair = {}
    for pair, by_cell in scores.items():
        per_pair[pair] = float(np.mean([np.mean(list(c.values())) for c in by_cell.values()]))
    err = 100.0 * float(np.mean(list(per_pair.values()))) if per_pair else float("nan")
    return AbxResult(err, n_triples, n_cells, skipped, per_pair)


# -- Track 2 --------------------------------------------------------------------


def clusters_from_labeling(labeling) -> dict:
    """Group a layer's segments by token id: token -> [(uid, start, end)]."""
    clusters = defaultdict(list)
    for uid, segs in labeling.items():
        for k, a, b in segs:
            clusters[k].append((uid, a, b))
    return dict(sorted(clusters.items()))


def transcribe(gold: Annotation, uid: str, start: int, end: int) -> tuple:
    """Gold phones with at least half their duration inside [start, end).

    Falls back to the single phone of maximal overlap.
    """
    out, best, best_ov = [], None, 0
    for s, e, sym in gold.phones[uid]:
        ov = min(e, end) - max(s, start)
        if ov <= 0:
            continue
        if 2 * ov >= e - s:
            out.append(sym)
        if ov > best_ov:
            best, best_ov = sym, ov
    if not out and best is not None:
        out = [best]
    return tuple(out)


def levenshtein(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def ned(a, b) -> float:
    n = max(len(a), len(b))
    return levenshtein(a, b) / n if n else 0.0


def ned_and_coverage(clusters: dict, gold: Annotation):
    """(NED %, coverage %). NED is nan when no cluster has two intervals."""
    if not clusters:
        raise ValueError("no discovered clusters")
    total_pairs = 0
    total_ned = 0.0
    for intervals in clusters.values():
        counts = Counter(transcribe(gold, *iv) for iv in intervals)
        keys = sorted(counts)
        for i, a in enumerate(keys):
            ca = counts[a]
            total_pairs += ca * (ca - 1) // 2
            for b in keys[i + 1 :]:
                pairs = ca * counts[b]
                total_pairs += pairs
                total_ned += pairs * ned(a, b)
    ned_pct = 100.0 * total_ned / total_pairs if total_pairs else float("nan")
    covered = {uid: np.zeros(gold.num_frames(uid), bool) for uid in gold.phones}
    for intervals in clusters.values():
        for uid, a, b in intervals:
            if uid in covered:
                covered[uid][max(a, 0) : b] = True
    n_gold = sum(len(c) for c in covered.values())
    cov = 100.0 * sum(int(c.sum()) for c in covered.values()) / n_gold if n_gold else 0.0
    return ned_pct, cov


def _edges(intervals):
    return sorted({a for a, _ in intervals} | {b for _, b in intervals})


def match_boundaries(found, ref, tol) -> int:
    """Greedy time-ordered one-to-one matching of sorted positions within +-tol."""
    i = j = hits = 0
    while i < len(found) and j < len(ref):
        if abs(found[i] - ref[j]) <= tol:
            hits += 1
            i += 1
            j += 1
        elif found[i] < ref[j]:
            i += 1
        else:
            j += 1
    return hits


def phone_boundary_scores(labeling, gold: Annotation, tol: int = 2) -> PRF:
    """Interior segment boundaries of a labeling against interior gold phone boundaries."""
    hits = n_found = n_ref = 0
    for uid, segs in labeling.items():
        found = [s.start for s in segs[1:]]
        ref = [s for s, _, _ in gold.phones[uid][1:]]
        hits += match_boundaries(found, ref, tol)
        n_found += len(found)
        n_ref += len(ref)
    return prf(hits, n_found, hits, n_ref)


def _by_utterance(clusters):
    out = defaultdict(list)
    for cid, intervals in clusters.items():
        for uid, a, b in intervals:
            out[uid].append((cid, a, b))
    return out


def token_links(clusters, gold: Annotation, tol: int):
    """Per utterance: intervals, gold words, and the interval-word edge lists."""
    found = _by_utterance(clusters)
    out = {}
    for uid in sorted(set(found) | set(gold.words)):
        ivs = sorted(found.get(uid, []), key=lambda c: (c[1], c[2], str(c[0])))
        words = gold.words.get(uid, [])
        edges = [
            [w for w, (ws, we, _) in enumerate(words) if abs(a - ws) <= tol and abs(b - we) <= tol]
            for _, a, b in ivs
        ]
        out[uid] = (ivs, words, edges)
    return out


def _max_matching(n_left, n_right, edges) -> int:
    if n_left == 0 or n_right == 0:
        return 0
    rows = [i for i, e in enumerate(edges) for _ in e]
    cols = [w for e in edges for w in e]
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_left, n_right))
    match = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.sum(match >= 0))


def parsing_scores(clusters, gold: Annotation, boundary_tol: int = 2) -> dict:
    """Boundary, token and type precision/recall/F against the gold word tier."""
    links = token_links(clusters, gold, boundary_tol)
    b_hits = b_found = b_ref = 0
    t_hits = t_found = t_ref = 0
    type_votes = defaultdict(Counter)
    for uid, (ivs, words, edges) in links.items():
        fb = _edges([(a, b) for _, a, b in ivs])
        rb = _edges([(a, b) for a, b, _ in words])
        b_hits += match_boundaries(fb, rb, boundary_tol)
        b_found += len(fb)
        b_ref += len(rb)
        t_hits += _max_matching(len(ivs), len(words), edges)
        t_found += len(ivs)
        t_ref += len(words)
        for (cid, _, _), e in zip(ivs, edges):
            for w in e:
                type_votes[cid][words[w][2]] += 1
    cluster_types = {
        cid: min(v.items(), key=lambda kv: (-kv[1], kv[0]))[0] for cid, v in type_votes.items()
    }
    found_types = set(cluster_types.values())
    gold_types = {sym for segs in gold.words.values() for _, _, sym in segs}
    return {
        "boundary": prf(b_hits, b_found, b_hits, b_ref),
        "token": prf(t_hits, t_found, t_hits, t_ref),
        "type": prf(len(found_types), len(clusters), len(found_types & gold_types), len(gold_types)),
    }


def grouping_scores(clusters, gold: Annotation, boundary_tol: int = 2):
    """Pairwise grouping P/R/F over token-matched intervals; returns (PRF, flagged)."""
    matched = []  # (cluster id, gold word type)
    for uid, (ivs, words, edges) in token_links(clusters, gold, boundary_tol).items():
        for (cid, _, _), e in zip(ivs, edges):
            if e:
                matched.append((cid, words[e[0]][2]))
    if not matched:
        return PRF(0.0, 0.0, 0.0), True
    by_cluster = Counter(c for c, _ in matched)
    by_type = Counter(t for _, t in matched)
    by_both = Counter(matched)

    def pairs(n):
        return n * (n - 1) // 2

    same_both = sum(pairs(v) for v in by_both.values())
    same_cluster = sum(pairs(v) for v in by_cluster.values())
    same_type = sum(pairs(v) for v in by_type.values())
    return prf(same_both, same_cluster, same_both, same_type), False


def track2_report(labeling, gold: Annotation, boundary_tol: int = 2) -> dict:
    """All Track 2 scores for one layer, keyed like the report columns."""
    clusters = clusters_from_labeling(labeling)
    ned_pct, cov = ned_and_coverage(clusters, gold)
    parse = parsing_scores(clusters, gold, boundary_tol)
    group, _ = grouping_scores(clusters, gold, boundary_tol)
    out = {"NED": ned_pct, "Cov.": cov}
    for name, val in (("Grouping", group), ("Type", parse["type"]), ("Token", parse["token"]),
                      ("Boundary", parse["boundary"])):
        out[f"{name} P"], out[f"{name} R"], out[f"{name} F"] = val
    return out
