"""Exact occurrence statistics of cylinder words in stationary Markov shifts.

The count of (overlapping) occurrences of a word along a window is computed
by a forward dynamic program over the states of the word's failure-function
automaton, carrying the law of the hit count.  A single forward sweep yields
the count law for every window length up to the sweep horizon.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .distributions import DiscreteLaw, law_from_pmf

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
STATIONARY_TOL = 1e-10
DEFAULT_KMAX = 64


class ChainError(ValueError):
    """Invalid chain specification (row sums, reducibility, periodicity, ...)."""


class WordError(ValueError):
    """Word outside the alphabet or of zero stationary probability."""


def _is_primitive(transition: np.ndarray) -> bool:
    m = transition.shape[0]
    adj = (transition > 0).astype(np.int64)
    power = adj.copy()
    # Wielandt: a primitive m x m matrix has a positive power of order <= (m-1)^2 + 1
    for _ in range((m - 1) ** 2 + 1):
        if power.all():
            return True
        power = np.minimum(power @ adj, 1)
    return bool(power.all())


def _solve_stationary(transition: np.ndarray) -> np.ndarray:
    m = transition.shape[0]
    system = np.vstack([transition.T - np.eye(m), np.ones((1, m))])
    rhs = np.zeros(m + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


class MarkovChainModel:
    """Finite-alphabet stationary Markov measure.

    Parameters
    ----------
    transition : array_like, shape (m, m)
        Row-stochastic transition matrix.
    stationary : array_like, optional
        Stationary vector.  Solved for when omitted, verified when given.
    """

    def __init__(self, transition, stationary=None):
        P = np.array(transition, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise ChainError(f"transition must be a square matrix, got shape {P.shape}")
        if np.any(P < 0):
            i = int(np.nonzero((P < 0).any(axis=1))[0][0])
            raise ChainError(f"transition row {i} has a negative entry")
        sums = P.sum(axis=1)
        for i, s in enumerate(sums):
            if abs(s - 1.0) > ROW_TOL:
                raise ChainError(f"transition row {i} sums to {float(s)!r}, expected 1")
        if not _is_primitive(P):
            raise ChainError("chain must be irreducible and aperiodic")
        if stationary is None:
            pi = _solve_stationary(P)
        else:
            pi = np.array(stationary, dtype=float)
            if pi.shape != (P.shape[0],) or np.any(pi < 0) or abs(pi.sum() - 1.0) > ROW_TOL:
                raise ChainError("stationary vector must be a probability vector of length m")
        resid = float(np.abs(pi @ P - pi).max())
        if resid > STATIONARY_TOL:
            raise ChainError(f"stationary vector is not invariant (residual {resid:.3g})")
        P.setflags(write=False)
        pi.setflags(write=False)
        self.transition = P
        self.stationary = pi

    @property
    def m(self) -> int:
        return self.transition.shape[0]

    @classmethod
    def iid(cls, p: Sequence[float]) -> "MarkovChainModel":
        """Product (Bernoulli) measure with marginal ``p``."""
        p = np.asarray(p, dtype=float)
        return cls(np.tile(p, (len(p), 1)), p)

    @classmethod
    def from_mapping(cls, spec: Mapping) -> "MarkovChainModel":
        """Build from ``{"m": .., "transition": [[..], ..], "stationary": [..]}``."""
        if "iid" in spec:
            return cls.iid(spec["iid"])
        P = spec["transition"]
        m = spec.get("m", len(P))
        if len(P) != m:
            raise ChainError(f"alphabet size m={m} but {len(P)} transition rows given")
        for i, row in enumerate(P):
            if len(row) != m:
                raise ChainError(f"transition row {i} has {len(row)} entries, expected {m}")
        return cls(P, spec.get("stationary"))

    def to_mapping(self) -> dict:
        return {
            "m": self.m,
            "transition": self.transition.tolist(),
            "stationary": self.stationary.tolist(),
        }

    def __repr__(self) -> str:
        return f"MarkovChainModel(m={self.m})"


def doubling_chain() -> MarkovChainModel:
    """Symbolic model of the doubling map: fair i.i.d. binary digits."""
    return MarkovChainModel.iid([0.5, 0.5])


@dataclass(frozen=True)
class CylinderWord:
    symbols: tuple

    def __post_init__(self):
        syms = tuple(int(s) for s in self.symbols)
        if not syms:
            raise WordError("cylinder word must have length n >= 1")
        if any(s < 0 for s in syms):
            raise WordError("symbols must be nonnegative")
        object.__setattr__(self, "symbols", syms)

    @property
    def n(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __str__(self) -> str:
        if all(s < 10 for s in self.symbols):
            return "".join(map(str, self.symbols))
        return ",".join(map(str, self.symbols))

    def extend(self, more: Iterable[int]) -> "CylinderWord":
        return CylinderWord(self.symbols + tuple(more))


def as_word(word) -> CylinderWord:
    """Accept a CylinderWord, a digit string like ``"0010"`` or a sequence of ints."""
    if isinstance(word, CylinderWord):
        return word
    if isinstance(word, str):
        word = word.strip()
        if "," in word:
            return CylinderWord(tuple(int(s) for s in word.split(",")))
        return CylinderWord(tuple(int(c) for c in word))
    return CylinderWord(tuple(word))


def failure_function(symbols: Sequence[int]) -> list[int]:
    """fail[q] = length of the longest proper border of symbols[:q]."""
    n = len(symbols)
    fail = [0] * (n + 1)
    k = 0
    for q in range(2, n + 1):
        while k > 0 and symbols[k] != symbols[q - 1]:
            k = fail[k]
        if symbols[k] == symbols[q - 1]:
            k += 1
        fail[q] = k
    return fail


def automaton_table(symbols: Sequence[int], m: int) -> np.ndarray:
    """delta[q, a]: matched-prefix length after reading ``a`` in state ``q``.

    State ``n`` means a full match; from it the automaton continues through
    the border, so overlapping occurrences are all detected.
    """
    n = len(symbols)
    fail = failure_function(symbols)
    delta = np.zeros((n + 1, m), dtype=np.int64)
    for q in range(n + 1):
        for a in range(m):
            if q < n and symbols[q] == a:
                delta[q, a] = q + 1
            elif q == 0:
                delta[q, a] = 0
            else:
                delta[q, a] = delta[fail[q], a]
    return delta


class _WordDP:
    """Transition structure of the (automaton state, last symbol) process.

    Nonzero automaton states determine the last symbol read; only the empty
    match state keeps the last symbol as a separate coordinate, which is
    needed for genuinely Markov (non-i.i.d.) chains.
    """

    def __init__(self, chain: MarkovChainModel, word: CylinderWord):
        m, n = chain.m, word.n
        if max(word.symbols) >= m:
            raise WordError(f"word {word} uses symbols outside the alphabet of size {m}")
        self.chain = chain
        self.word = word
        self.n = n
        self.delta = automaton_table(word.symbols, m)
        S = m + n
        self.size = S
        self.move = np.zeros((S, S))
        self.hit = np.zeros((S, S))
        P = chain.transition
        for src in range(S):
            q, a = self._decode(src)
            for b in range(m):
                if P[a, b] == 0:
                    continue
                q2 = int(self.delta[q, b])
                dst = self._encode(q2, b)
                target = self.hit if q2 == n else self.move
                target[src, dst] += P[a, b]
        self.move_T = np.ascontiguousarray(self.move.T)
        self.hit_T = np.ascontiguousarray(self.hit.T)

    def _encode(self, q: int, a: int) -> int:
        return a if q == 0 else self.chain.m + q - 1

    def _decode(self, idx: int) -> tuple[int, int]:
        m = self.chain.m
        if idx < m:
            return 0, idx
        q = idx - m + 1
        return q, self.word.symbols[q - 1]

    def initial(self, K: int) -> tuple[np.ndarray, float]:
        """State/count law after the first symbol x_0 ~ stationary."""
        dist = np.zeros((self.size, K + 1))
        tail = 0.0
        for a, pa in enumerate(self.chain.stationary):
            q = int(self.delta[0, a])
            idx = self._encode(q, a)
            if q == self.n:
                if K >= 1:
                    dist[idx, 1] += pa
                else:
                    tail += pa
            else:
                dist[idx, 0] += pa
        return dist, tail

    def conditioned(self, K: int) -> np.ndarray:
        """State law given the word occupies positions 0..n-1; that hit is not counted."""
        dist = np.zeros((self.size, K + 1))
        dist[self._encode(self.n, self.word.symbols[-1]), 0] = 1.0
        return dist

    def step(self, dist: np.ndarray) -> tuple[np.ndarray, float]:
        """Read one symbol; returns the new law and the mass overflowing past K."""
        new = self.move_T @ dist
        hits = self.hit_T @ dist
        new[:, 1:] += hits[:, :-1]
        return new, float(hits[:, -1].sum())


@dataclass(frozen=True)
class CountDistribution:
    """Law of Z_U^L, the number of j in {0..L-1} with T^j x in U."""

    window: int
    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        total = float(probs.sum()) + self.tail_mass
        if np.any(probs < -1e-15) or abs(total - 1.0) > 1e-10:
            raise ValueError(f"count distribution mass {total!r} is not 1")

    @property
    def Kmax(self) -> int:
        return len(self.probs) - 1

    @property
    def p_hit(self) -> float:
        """mu(Z >= 1), computed from the complement of the zero bin."""
        return 1.0 - float(self.probs[0])

    def prob(self, k: int) -> float:
        if k > self.Kmax:
            raise IndexError(f"k={k} beyond tabulated Kmax={self.Kmax}")
        return float(self.probs[k])

    def cdf(self, k: int) -> float:
        """mu(Z <= k)."""
        return float(self.probs[: k + 1].sum())

    def as_law(self) -> DiscreteLaw:
        return law_from_pmf(self.probs)

    def rows(self) -> list[tuple[int, int, float]]:
        return [(self.window, k, float(p)) for k, p in enumerate(self.probs)]

    def to_json(self) -> dict:
        return {"L": self.window, "probs": self.probs.tolist(), "tail_mass": self.tail_mass}


@dataclass(frozen=True)
class CountSweep:
    """Count laws for every window 0..Lmax from one forward pass."""

    word: CylinderWord
    probs: np.ndarray  # shape (Lmax + 1, K + 1)
    tail: np.ndarray  # shape (Lmax + 1,)

    @property
    def Lmax(self) -> int:
        return self.probs.shape[0] - 1

    @property
    def K(self) -> int:
        return self.probs.shape[1] - 1

    def at(self, L: int) -> CountDistribution:
        if not 0 <= L <= self.Lmax:
            raise IndexError(f"window {L} outside swept range 0..{self.Lmax}")
        return CountDistribution(L, self.probs[L].copy(), float(self.tail[L]))

    def p_hit(self, L: int) -> float:
        """mu(Z^L >= 1); zero for L <= 0."""
        if L <= 0:
            return 0.0
        return 1.0 - float(self.probs[L, 0])

    def cdf(self, L: int, k: int) -> float:
        """mu(Z^L <= k); one for L <= 0."""
        if L <= 0:
            return 1.0
        return float(self.probs[L, : k + 1].sum())


def _validated(chain: MarkovChainModel, word) -> CylinderWord:
    word = as_word(word)
    if max(word.symbols) >= chain.m:
        raise WordError(f"word {word} uses symbols outside the alphabet of size {chain.m}")
    if word_measure(chain, word) <= 0:
        raise WordError(f"word {word} has zero stationary probability")
    return word


def word_measure(chain: MarkovChainModel, word) -> float:
    """pi(w_0) * prod P(w_i, w_{i+1})."""
    w = as_word(word).symbols
    if max(w) >= chain.m:
        raise WordError(f"word uses symbols outside the alphabet of size {chain.m}")
    p = float(chain.stationary[w[0]])
    for a, b in zip(w, w[1:]):
        p *= float(chain.transition[a, b])
    return p


def count_sweep(chain: MarkovChainModel, word, Lmax: int, Kmax: int) -> CountSweep:
    """Laws of Z^L for all L = 0..Lmax, counts above ``Kmax`` lumped into a tail."""
    word = _validated(chain, word)
    if Lmax < 0 or Kmax < 0:
        raise ValueError("Lmax and Kmax must be nonnegative")
    dp = _WordDP(chain, word)
    n = word.n
    probs = np.zeros((Lmax + 1, Kmax + 1))
    tail = np.zeros(Lmax + 1)
    probs[0, 0] = 1.0
    if Lmax == 0:
        return CountSweep(word, probs, tail)
    dist, overflow = dp.initial(Kmax)
    # after reading i symbols all occurrences starting at j <= i - n are complete,
    # so the count equals Z^(i - n + 1)
    for i in range(1, Lmax + n):
        if i > 1:
            dist, spill = dp.step(dist)
            overflow += spill
        L = i - n + 1
        if L >= 1:
            probs[L] = dist.sum(axis=0)
            tail[L] = overflow
    return CountSweep(word, probs, tail)


def count_distribution_exact(chain: MarkovChainModel, word, L: int, Kmax: int | None = None) -> CountDistribution:
    """Exact law of Z_U^L for the cylinder of ``word`` under the stationary chain."""
    if L < 1:
        raise ValueError(f"window L must be >= 1, got {L}")
    if Kmax is None:
        Kmax = min(L, DEFAULT_KMAX)
    if Kmax > L:
        raise ValueError(f"Kmax={Kmax} exceeds the window L={L}")
    return count_sweep(chain, word, L, Kmax).at(L)


def entry_time_tail(chain: MarkovChainModel, word, Lmax: int) -> np.ndarray:
    """mu(tau_hat >= l) for l = 0..Lmax, tau_hat the first j >= 0 with T^j x in U."""
    if Lmax < 1:
        raise ValueError("Lmax must be >= 1")
    return count_sweep(chain, word, Lmax, 0).probs[:, 0].copy()


def conditional_return_counts(chain: MarkovChainModel, word, Lmax: int, K: int) -> np.ndarray:
    """Law of the number of returns j in {1..l-1} given x in U, for l = 1..Lmax.

    Row ``l - 1`` holds P(#returns = c | U) for c = 0..K; counts above K are
    dropped from the table (its row sums fall short of one by that mass).
    """
    word = _validated(chain, word)
    if Lmax < 1:
        raise ValueError("Lmax must be >= 1")
    dp = _WordDP(chain, word)
    out = np.zeros((Lmax, K + 1))
    dist = dp.conditioned(K)
    out[0] = dist.sum(axis=0)
    for i in range(1, Lmax):
        dist, _ = dp.step(dist)
        out[i] = dist.sum(axis=0)
    return out


def conditional_return_tail(chain: MarkovChainModel, word, Lmax: int, k: int) -> np.ndarray:
    """P(tau^k >= l | U) for l = 1..Lmax (entry ``l - 1``).

    tau^k is the k-th return time (tau^0 = 0); tau^k >= l means fewer than k
    returns among times 1..l-1.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    counts = conditional_return_counts(chain, word, Lmax, k - 1)
    return counts.sum(axis=1)


@dataclass(frozen=True)
class MixingBound:
    """phi(k) <= C * rho^floor(k / block), optionally sharpened by a table.

    ``kind`` is ``"phi"`` or ``"alpha"``; the alpha-mixing coefficient of a
    Markov chain is dominated by its phi coefficient, so one bound serves both.
    """

    C: float
    rho: float
    block: int = 1
    table: tuple = field(default=())
    kind: str = "phi"

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"mixing rate rho must lie in [0, 1), got {self.rho}")
        if any(b > a + 1e-15 for a, b in zip(self.table, self.table[1:])):
            raise ValueError("tabulated mixing coefficients must be nonincreasing")

    def __call__(self, k: int) -> float:
        if k <= 0:
            return 1.0
        if k < len(self.table):
            return float(self.table[k])
        return min(1.0, self.C * self.rho ** (k // self.block))

    def as_alpha(self) -> "MixingBound":
        return MixingBound(self.C, self.rho, self.block, self.table, "alpha")


def dobrushin(P: np.ndarray) -> float:
    """max over row pairs of the total variation distance between rows."""
    diff = np.abs(P[:, None, :] - P[None, :, :]).sum(axis=2)
    return 0.5 * float(diff.max())


def phi_bound(chain: MarkovChainModel, tabulate: int = 0) -> MixingBound:
    """Certified exponential phi-mixing bound from the Dobrushin coefficient.

    When a single step does not contract, the coefficient of the first
    contracting power P^h (h <= m^2) is used with block length h.  With
    ``tabulate > 0`` the sharper values max_a TV(P^(k+1)(a, .), pi) are
    stored for k < tabulate.
    """
    P = chain.transition
    power = P.copy()
    for h in range(1, chain.m**2 + 1):
        rho = dobrushin(power)
        if rho < 1.0 - 1e-15:
            break
        power = power @ P
    else:
        raise ChainError(f"no power of the transition matrix up to {chain.m ** 2} is scrambling")
    table = ()
    if tabulate:
        vals = []
        Q = P.copy()
        for _ in range(tabulate):
            vals.append(0.5 * float(np.abs(Q - chain.stationary).sum(axis=1).max()))
            Q = Q @ P
        vals[0] = 1.0
        table = tuple(np.minimum.accumulate(vals).tolist())
    return MixingBound(1.0, rho, h, table)
