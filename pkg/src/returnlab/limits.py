"""Cluster laws, return coefficients, Kac identity and scaling schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import ClusterLaw
from .markov_exact import (
    CountDistribution,
    CylinderWord,
    MarkovChainModel,
    as_word,
    conditional_return_counts,
    conditional_return_tail,
    count_sweep,
    word_measure,
)

DEFAULT_K = 8
UNRELIABLE_LAMBDA = 1e-6


class DegenerateError(ValueError):
    """Raised when a normalising probability vanishes."""


def cluster_law_from_counts(dist: CountDistribution) -> ClusterLaw:
    """lambda_k(L, U) = mu(Z^L = k) / mu(Z^L >= 1), k = 1..Kmax."""
    p_hit = dist.p_hit
    if p_hit <= 0:
        raise DegenerateError("mu(Z^L >= 1) = 0: no hit possible in the window")
    probs = np.clip(np.asarray(dist.probs[1:], dtype=float), 0.0, None) / p_hit
    if len(probs) == 0:
        raise DegenerateError("count distribution has no bins above 0 (Kmax = 0)")
    tail = max(0.0, 1.0 - float(probs.sum()))
    return ClusterLaw(probs, tail)


@dataclass(frozen=True)
class AlphaSpectrum:
    """alpha_k(L, U) = P(tau^(k-1) < L <= tau^k | U) for k = 1..K.

    ``remainder`` is the conditional probability of K or more returns
    within the window, so ``alpha.sum() + remainder == 1``.
    """

    L: int
    alpha: np.ndarray
    remainder: float

    @property
    def extremal_index(self) -> float:
        return float(self.alpha[0])

    @property
    def K(self) -> int:
        return len(self.alpha)


def alpha_spectrum(chain: MarkovChainModel, word, L: int, K: int = DEFAULT_K) -> AlphaSpectrum:
    """Conditional return coefficients from the exact conditioned sweep.

    alpha_k(L, U) is the probability, given x in U, of exactly k - 1 returns
    at times 1..L-1.
    """
    if L < 1 or K < 1:
        raise ValueError("L and K must be positive")
    counts = conditional_return_counts(chain, word, L, K - 1)[L - 1]
    alpha = np.clip(counts, 0.0, 1.0)
    return AlphaSpectrum(L, alpha, max(0.0, 1.0 - float(alpha.sum())))


def lambda_from_alpha(spectrum: AlphaSpectrum) -> ClusterLaw:
    """lambda_k = (alpha_k - alpha_(k+1)) / alpha_1, k = 1..K-1.

    The telescoped remainder alpha_K / alpha_1 becomes the tail mass.  Small
    negative differences (finite-window rounding of a monotone limit) are
    clipped to zero; large ones raise.
    """
    a = spectrum.alpha
    a1 = float(a[0])
    if a1 <= 0:
        raise DegenerateError("extremal index alpha_1 = 0: lambda-from-alpha is inapplicable")
    if len(a) < 2:
        return ClusterLaw(np.array([1.0]), 0.0)
    diffs = (a[:-1] - a[1:]) / a1
    if diffs.min() < -1e-9:
        raise DegenerateError(
            f"alpha spectrum is not nonincreasing (min difference {diffs.min():.3g})"
        )
    diffs = np.clip(diffs, 0.0, None)
    tail = max(0.0, 1.0 - float(diffs.sum()))
    return ClusterLaw(diffs, tail)


@dataclass(frozen=True)
class KacCheck:
    lhs: float
    rhs: float
    diff: float

    def holds(self, tol: float = 1e-10) -> bool:
        return self.diff < tol


def kac_identity_check(chain: MarkovChainModel, word, L: int) -> KacCheck:
    """mu(Z^L >= 1) against sum_{k=1..L} mu(U, tau_U >= k)."""
    if L < 1:
        raise ValueError("L must be >= 1")
    word = as_word(word)
    lhs = 1.0 - float(count_sweep(chain, word, L, 0).probs[L, 0])
    tail = conditional_return_tail(chain, word, L, 1)
    rhs = word_measure(chain, word) * float(tail.sum())
    return KacCheck(lhs, rhs, abs(lhs - rhs))


def nested_family(base: Sequence[int] | str, depths: Sequence[int], m: int = 2) -> list[CylinderWord]:
    """Words of the given depths, each a prefix of the next.

    A single-symbol ``base`` such as ``"0"`` repeats (giving 0^n); a longer
    base is repeated periodically, e.g. ``"01"`` gives 0101...
    """
    base = as_word(base).symbols
    if max(base) >= m:
        raise ValueError("base word uses symbols outside the alphabet")
    return [CylinderWord(tuple(base[i % len(base)] for i in range(d))) for d in depths]


def check_nested(words: Sequence[CylinderWord]) -> None:
    for a, b in zip(words, words[1:]):
        if b.n <= a.n or b.symbols[: a.n] != a.symbols:
            raise ValueError(f"family is not nested: {a} is not a proper prefix of {b}")


def default_s_rule(omega: float = 0.5) -> Callable[[int, float], int]:
    """s_n = floor(mu(U_n)^(-omega))."""

    def rule(n: int, mu: float) -> int:
        return max(1, int(math.floor(mu ** (-omega) * (1 + 1e-12))))

    return rule


@dataclass(frozen=True)
class ScheduleEntry:
    n: int
    word: CylinderWord
    mu: float
    s: int
    p: float
    r: float
    N: float
    Delta: int
    blocks: int
    window: int
    tau_hyp: float  # s_n * mu(tau_hat <= s_n), the sequence-theorem hypothesis


@dataclass(frozen=True)
class ScalingSchedule:
    """Bookkeeping (s_n, p_n, r_n, N_n, Delta_n) for a nested family.

    ``r`` and ``N`` are the real-valued r_n = t / p_n and N_n = r_n s_n;
    computations use the integer ``blocks = round(r_n)`` and
    ``window = blocks * s_n``.
    """

    t: float
    alpha_exp: float
    eta: float
    entries: tuple
    flags: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {
                "n": e.n, "word": str(e.word), "mu": e.mu, "s": e.s, "p": e.p, "r": e.r,
                "N": e.N, "Delta": e.Delta, "blocks": e.blocks, "window": e.window,
                "s_tau_hyp": e.tau_hyp,
            }
            for e in self.entries
        ]


def _strictly_monotone(values: Sequence[float], increasing: bool) -> bool:
    v = np.asarray(values, dtype=float)
    d = np.diff(v)
    return bool(np.all(d > 0) if increasing else np.all(d < 0))


def build_schedule(
    family: Sequence,
    t: float,
    chain: MarkovChainModel,
    s_rule: Callable[[int, float], int] | None = None,
    alpha_exp: float = 0.5,
    eta: float | None = None,
    omega: float = 0.5,
) -> ScalingSchedule:
    """Exact schedule along a nested family of cylinder words.

    Flags report whether p_n decreases, s_n^eta p_n increases and
    s_n^(1 - alpha_exp) p_n increases over the computed range.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if not 0 < alpha_exp < 1:
        raise ValueError("alpha_exp must lie in (0, 1)")
    if eta is None:
        eta = (1.0 + omega) / 2.0
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    words = [as_word(w) for w in family]
    check_nested(words)
    rule = s_rule or default_s_rule(omega)
    entries = []
    for w in words:
        mu = word_measure(chain, w)
        s = int(rule(w.n, mu))
        sweep = count_sweep(chain, w, s, 0)
        p = 1.0 - float(sweep.probs[s, 0])
        # mu(tau_hat <= s) = mu(Z^(s+1) >= 1)
        tail = 1.0 - float(count_sweep(chain, w, s + 1, 0).probs[s + 1, 0])
        r = t / p
        blocks = max(1, int(round(r)))
        entries.append(
            ScheduleEntry(
                n=w.n, word=w, mu=mu, s=s, p=p, r=r, N=r * s,
                Delta=max(1, int(math.floor(s**alpha_exp))),
                blocks=blocks, window=blocks * s, tau_hyp=s * tail,
            )
        )
    ps = [e.p for e in entries]
    flags = {
        "s_increasing": _strictly_monotone([e.s for e in entries], True),
        "p_decreasing": _strictly_monotone(ps, False),
        "s_eta_p_increasing": _strictly_monotone([e.s**eta * e.p for e in entries], True),
        "s_1malpha_p_increasing": _strictly_monotone(
            [e.s ** (1 - alpha_exp) * e.p for e in entries], True
        ),
    }
    return ScalingSchedule(t, alpha_exp, eta, tuple(entries), flags)


@dataclass
class ScanResult:
    """Grid of lambda_k(L, U_n) plus lambda_hat_k(n) = lambda_k(s_n, U_n)."""

    K: int
    rows: list = field(default_factory=list)
    lambda_hat: dict = field(default_factory=dict)  # n -> array of lambda_hat_k
    hypotheses: dict = field(default_factory=dict)  # n -> {"p": .., "s_tau": ..}
    diagnostic: float = float("nan")


def limit_scan(
    chain: MarkovChainModel,
    family: Sequence,
    L_grid: Sequence[int],
    K: int = DEFAULT_K,
    schedule: ScalingSchedule | None = None,
    t: float = 1.0,
    omega: float = 0.5,
) -> ScanResult:
    """Tabulate the double-limit grid and the single-limit schedule values.

    ``family`` holds the nested words U_n (the n-grid).  Rows are ordered by
    (n, L, k); cells whose lambda_hat_k(n) falls below 1e-6 are marked
    unreliable.
    """
    result = ScanResult(K=K)
    words = [as_word(w) for w in family]
    if K < 1 or not words or not L_grid:
        return result
    if schedule is None:
        schedule = build_schedule(words, t, chain, omega=omega)
    by_n = {e.n: e for e in schedule.entries}
    Ls = sorted(set(int(L) for L in L_grid))
    for w in words:
        entry = by_n[w.n]
        Lmax = max(max(Ls), entry.s + 1)
        sweep = count_sweep(chain, w, Lmax, K)
        hat = cluster_law_from_counts(sweep.at(entry.s)).probs[:K]
        result.lambda_hat[w.n] = hat
        result.hypotheses[w.n] = {
            "s": entry.s,
            "p": entry.p,
            "s_tau": entry.tau_hyp,
        }
        for L in Ls:
            lam = cluster_law_from_counts(sweep.at(L)).probs[:K]
            for k in range(1, K + 1):
                result.rows.append(
                    {
                        "n": w.n, "L": L, "k": k,
                        "lambda": float(lam[k - 1]),
                        "lambda_hat": float(hat[k - 1]),
                        "diff": float(abs(lam[k - 1] - hat[k - 1])),
                        "unreliable": bool(hat[k - 1] < UNRELIABLE_LAMBDA),
                    }
                )
    n_max = max(w.n for w in words)
    last = [r for r in result.rows if r["n"] == n_max and r["L"] == Ls[-1]]
    result.diagnostic = max(r["diff"] for r in last)
    return result
