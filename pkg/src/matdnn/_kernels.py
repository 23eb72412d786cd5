"""Compiled inner loops (Viterbi, Gibbs, DTW). Pure functions of their arguments."""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def gauss_loglik(X, means, variances):
    """Diagonal-Gaussian log densities, shape (T, J), for J (mean, variance) pairs."""
    T, D = X.shape
    J = means.shape[0]
    out = np.empty((T, J))
    lognorm = np.empty(J)
    inv = 1.0 / variances
    for j in range(J):
        acc = D * math.log(2.0 * math.pi)
        for d in range(D):
            acc += math.log(variances[j, d])
        lognorm[j] = -0.5 * acc
    for t in range(T):
        for j in range(J):
            acc = 0.0
            for d in range(D):
                diff = X[t, d] - means[j, d]
                acc += diff * diff * inv[j, d]
            out[t, j] = lognorm[j] - 0.5 * acc
    return out


@njit(cache=True)
def align_segment(emis, log_self, log_adv):
    """Best left-to-right state path through L >= m frames.

    The path starts in state 0, ends in state m-1 and pays the exit
    transition out of the last state. Ties keep the earlier state entry.
    Returns (score, state index per frame).
    """
    L, m = emis.shape
    V = np.full(m, NEG_INF)
    V[0] = emis[0, 0]
    stay = np.zeros((L, m), np.bool_)
    new = np.empty(m)
    for t in range(1, L):
        for s in range(m):
            a = V[s] + log_self[s]
            b = V[s - 1] + log_adv[s - 1] if s > 0 else NEG_INF
            if a >= b:
                new[s] = a
                stay[t, s] = True
            else:
                new[s] = b
            new[s] += emis[t, s]
        V[:] = new
    score = V[m - 1] + log_adv[m - 1]
    path = np.empty(L, np.int64)
    s = m - 1
    for t in range(L - 1, -1, -1):
        path[t] = s
        if t > 0 and not stay[t, s]:
            s -= 1
    return score, path


@njit(cache=True)
def decode_loop(emis, log_self, log_adv, entry):
    """Viterbi over a token loop of left-to-right HMMs, T >= m.

    emis: (T, n, m) state log densities; entry: (n,) weighted log LM.
    Returns (score, segment token ids, segment start frames).
    Ties prefer the lower token id, then the earlier boundary.
    """
    T, n, m = emis.shape
    delta = np.full((n, m), NEG_INF)
    new = np.empty((n, m))
    stay = np.zeros((T, n, m), np.bool_)
    exit_tok = np.zeros(T, np.int64)
    for k in range(n):
        delta[k, 0] = entry[k] + emis[0, k, 0]
    for t in range(1, T):
        best = NEG_INF
        bk = 0
        for k in range(n):
            v = delta[k, m - 1] + log_adv[k, m - 1]
            if v > best:
                best = v
                bk = k
        exit_tok[t - 1] = bk
        for k in range(n):
            for s in range(m):
                a = delta[k, s] + log_self[k, s]
                if s == 0:
                    b = best + entry[k]
                else:
                    b = delta[k, s - 1] + log_adv[k, s - 1]
                if a >= b:
                    new[k, s] = a
                    stay[t, k, s] = True
                else:
                    new[k, s] = b
                new[k, s] += emis[t, k, s]
        delta[:, :] = new
    best = NEG_INF
    k = 0
    for kk in range(n):
        v = delta[kk, m - 1] + log_adv[kk, m - 1]
        if v > best:
            best = v
            k = kk
    toks = np.empty(T, np.int64)
    starts = np.empty(T, np.int64)
    nseg = 0
    s = m - 1
    t = T - 1
    while t >= 0:
        if s > 0:
            if not stay[t, k, s]:
                s -= 1
        elif t == 0 or not stay[t, k, 0]:
            toks[nseg] = k
            starts[nseg] = t
            nseg += 1
            if t > 0:
                k = exit_tok[t - 1]
                s = m - 1
        t -= 1
    return best, toks[:nseg][::-1].copy(), starts[:nseg][::-1].copy()


@njit(cache=True)
def gibbs_sweep(words, docs, z, n_dk, n_kw, n_k, alpha, beta, u):
    """One collapsed Gibbs sweep over all word tokens, in place."""
    K = n_k.shape[0]
    V = n_kw.shape[1]
    vbeta = V * beta
    p = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_kw[k, w] -= 1
        n_k[k] -= 1
        total = 0.0
        for kk in range(K):
            total += (n_dk[d, kk] + alpha) * (n_kw[kk, w] + beta) / (n_k[kk] + vbeta)
            p[kk] = total
        r = u[i] * total
        kk = 0
        while kk < K - 1 and p[kk] <= r:
            kk += 1
        z[i] = kk
        n_dk[d, kk] += 1
        n_kw[kk, w] += 1
        n_k[kk] += 1


@njit(cache=True)
def dtw_accumulate(cost):
    """Min accumulated cost over steps (1,0),(0,1),(1,1); ties take the shorter path.

    Returns (accumulated cost, path length).
    """
    R, C = cost.shape
    acc = np.full((R, C), np.inf)
    length = np.zeros((R, C), np.int64)
    acc[0, 0] = cost[0, 0]
    length[0, 0] = 1
    for i in range(R):
        for j in range(C):
            if i == 0 and j == 0:
                continue
            best = np.inf
            blen = 0
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
                blen = length[i - 1, j - 1]
            if i > 0:
                v = acc[i - 1, j]
                if v < best or (v == best and length[i - 1, j] < blen):
                    best = v
                    blen = length[i - 1, j]
            if j > 0:
                v = acc[i, j - 1]
                if v < best or (v == best and length[i, j - 1] < blen):
                    best = v
                    blen = length[i, j - 1]
            acc[i, j] = best + cost[i, j]
            length[i, j] = blen + 1
    return acc[R - 1, C - 1], length[R - 1, C - 1]
