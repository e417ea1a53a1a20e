"""Independent brute-force oracles: enumerate every path of a finite window."""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from returnlab.markov_exact import MarkovChainModel, as_word

# fixed chain test set (m <= 3)
TEST_CHAINS = {
    "iid_half": MarkovChainModel.iid([0.5, 0.5]),
    "iid_skew": MarkovChainModel.iid([0.3, 0.7]),
    "two_state": MarkovChainModel([[0.9, 0.1], [0.2, 0.8]]),
    "three_state": MarkovChainModel([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.4, 0.1, 0.5]]),
}


@lru_cache(maxsize=16)
def _paths(key: str, length: int):
    chain = TEST_CHAINS[key]
    m = chain.m
    idx = np.arange(m**length, dtype=np.int64)
    seqs = (idx[:, None] // m ** np.arange(length - 1, -1, -1)) % m
    w = chain.stationary[seqs[:, 0]].copy()
    for i in range(1, length):
        w *= chain.transition[seqs[:, i - 1], seqs[:, i]]
    return seqs, w


@lru_cache(maxsize=64)
def _codes(key: str, length: int, n: int):
    seqs, _ = _paths(key, length)
    m = TEST_CHAINS[key].m
    code = np.zeros((seqs.shape[0], length - n + 1), dtype=np.int16)
    for i in range(n):
        code = code * m + seqs[:, i : i + length - n + 1].astype(np.int16)
    return code


def _word_code(word, m: int) -> int:
    c = 0
    for a in word:
        c = c * m + a
    return c


def _accurate_bincount(keys: np.ndarray, weight: np.ndarray, size: int) -> np.ndarray:
    """Weighted bincount summed in short chunks, chunks combined with fsum."""
    chunk = 2048
    ids = np.arange(len(keys)) // chunk
    nchunks = int(ids[-1]) + 1
    part = np.bincount(ids * size + keys, weights=weight, minlength=nchunks * size).reshape(nchunks, size)
    return np.array([math.fsum(col) for col in part.T])


def brute_tables(key: str, word, Lmax: int):
    """Count laws for L = 0..Lmax and conditional return laws for l = 1..Lmax.

    Returns ``(counts, cond)`` with ``counts[L, k] = mu(Z^L = k)`` and
    ``cond[l - 1, c] = P(#returns in 1..l-1 = c | U)``, both padded to Lmax + 1
    columns.
    """
    w = as_word(word).symbols
    n = len(w)
    chain = TEST_CHAINS[key]
    length = Lmax + n - 1
    seqs, weight = _paths(key, length)
    hits = _codes(key, length, n) == _word_code(w, chain.m)
    csum = np.cumsum(hits, axis=1, dtype=np.int8)
    counts = np.zeros((Lmax + 1, Lmax + 1))
    counts[0, 0] = 1.0
    for L in range(1, Lmax + 1):
        counts[L] = _accurate_bincount(csum[:, L - 1], weight, Lmax + 1)
    inU = hits[:, 0]
    wU, cU = weight[inU], csum[inU]
    cond = np.zeros((Lmax, Lmax + 1))
    for l in range(1, Lmax + 1):
        cond[l - 1] = np.bincount(cU[:, l - 1] - 1, weights=wU, minlength=Lmax + 1) / wU.sum()
    return counts, cond


def all_words(m: int, n: int):
    return ["".join(map(str, t)) for t in itertools.product(range(m), repeat=n)]


def window_dp(chain, word, Lmax: int, K: int, conditioned: bool = False) -> np.ndarray:
    """Count laws from a DP whose state is the last n - 1 symbols read.

    Independent of the pattern automaton.  Unconditioned: row ``L`` is the
    law of Z^L (counts above K dropped).  Conditioned on the word at time 0:
    row ``l - 1`` is the law of the number of returns in 1..l-1.
    """
    w = tuple(as_word(word).symbols)
    n, m = len(w), chain.m
    P, pi = chain.transition, chain.stationary
    if n == 1:
        # state carries only the last symbol
        states = [(a,) for a in range(m)]
    else:
        states = list(itertools.product(range(m), repeat=n - 1))
    index = {s: i for i, s in enumerate(states)}
    dist = np.zeros((len(states), K + 1))
    out = np.zeros((Lmax + 1, K + 1))
    if conditioned:
        last = w[1:] if n > 1 else w
        dist[index[last], 0] = 1.0
        out[0] = dist.sum(axis=0)
        steps = Lmax - 1
    else:
        out[0, 0] = 1.0
        if n == 1:
            for a in range(m):
                dist[index[(a,)], 1 if (a,) == w else 0] += pi[a]
        else:
            for s in states:
                p = pi[s[0]]
                for a, b in zip(s, s[1:]):
                    p *= P[a, b]
                dist[index[s], 0] = p
        if n == 1:
            out[1] = dist.sum(axis=0)
            steps = Lmax - 1
        else:
            steps = Lmax
    row = 1 if (n == 1 and not conditioned) else 0
    for _ in range(steps):
        new = np.zeros_like(dist)
        for s, i in index.items():
            for a in range(m):
                p = P[s[-1], a]
                if p == 0:
                    continue
                full = s + (a,) if n > 1 else (a,)
                t = full[1:] if n > 1 else (a,)
                j = index[t]
                if full == w:
                    new[j, 1:] += p * dist[i, :-1]
                else:
                    new[j] += p * dist[i]
        dist = new
        row += 1
        out[row] = dist.sum(axis=0)
    return out[:Lmax] if conditioned else out
