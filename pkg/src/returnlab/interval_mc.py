"""Monte Carlo return statistics for the Gauss map and the doubling map.

Points are drawn from the invariant measure (no burn-in).  Two ways of
producing the symbolic itinerary of a sampled point are available:

* ``orbit``: iterate the map in binary64.  Exact digits are only
  trustworthy for a limited depth (floating-point shadowing), see
  :attr:`IntervalSystem.fidelity_depth`.
* ``symbolic``: draw the stationary digit process directly.  For the
  doubling map the digits are i.i.d. fair bits.  For the Gauss map the
  digits are generated through the natural extension: given the backward
  continued fraction ``y`` of the past digits, the current point has
  density ``(1 + y) / (1 + x y)**2`` on (0, 1), which is sampled by inverse
  CDF, and ``y`` updates to ``1 / (a + y)``.  Every step uses fresh
  randomness, so no rounding error accumulates along the itinerary.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .markov_exact import CylinderWord, as_word

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
GAUSS_MEAN = 1.0 / LN2 - 1.0
DEFAULT_MAX_WORKLOAD = 5 * 10**9
CHUNK_SYMBOLS = 4 * 10**6


class BoundaryError(ValueError):
    """The orbit hit a partition boundary (or 0) before the requested depth."""


class FidelityWarning(UserWarning):
    """Floating-point orbits are used beyond their reliable depth."""


@dataclass(frozen=True)
class IntervalSystem:
    kind: str

    def __post_init__(self):
        if self.kind not in ("gauss", "doubling"):
            raise ValueError(f"unknown interval map {self.kind!r}; expected 'gauss' or 'doubling'")

    @property
    def fidelity_depth(self) -> int:
        # doubling loses one bit per step out of 53; Gauss digits lose ~2.3 bits per step on average
        return 50 if self.kind == "doubling" else 30

    def density(self, x):
        if self.kind == "gauss":
            return 1.0 / ((1.0 + np.asarray(x)) * LN2)
        return np.ones_like(np.asarray(x, dtype=float))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.log2(1.0 + x) if self.kind == "gauss" else x

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.exp2(u) - 1.0 if self.kind == "gauss" else u

    def step(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gauss":
            y = 1.0 / x
            return y - np.floor(y)
        y = 2.0 * x
        return y - np.floor(y)


GAUSS = IntervalSystem("gauss")
DOUBLING = IntervalSystem("doubling")


def system(kind: str) -> IntervalSystem:
    return IntervalSystem(kind)


class OrbitSampler:
    """Random source for one stream; (seed, stream_index) fixes the sequence."""

    def __init__(self, system: IntervalSystem, seed: int, stream_index: int = 0):
        if stream_index < 0:
            raise ValueError("stream_index must be nonnegative")
        self.system = system
        self.seed = int(seed)
        self.stream_index = int(stream_index)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index,))
        self.generator = np.random.Generator(np.random.PCG64(seq))


def sample_stationary(sampler: OrbitSampler, size: int | None = None):
    """Draw from the invariant measure (inverse CDF of a uniform)."""
    u = sampler.generator.random(size)
    return sampler.system.inverse_cdf(u) if size is not None else float(sampler.system.inverse_cdf(u))


def itinerary(system: IntervalSystem, x: float, n: int) -> CylinderWord:
    """First ``n`` partition symbols along the orbit of ``x``.

    Gauss map: continued fraction digits floor(1/x_j).  Doubling map:
    binary digits floor(2 x_j).
    """
    if not 0.0 < x < 1.0 and not (system.kind == "gauss" and x == 1.0):
        raise BoundaryError(f"x={x!r} is not in the open unit interval")
    digits = []
    for j in range(n):
        if x <= 0.0:
            raise BoundaryError(f"orbit reached 0 at step {j}")
        if system.kind == "gauss":
            y = 1.0 / x
            a = math.floor(y)
            if y == a and j < n - 1:
                raise BoundaryError(f"orbit hit the partition boundary 1/{a} at step {j}")
            digits.append(int(a))
            x = y - a
        else:
            y = 2.0 * x
            a = math.floor(y)
            digits.append(int(a))
            x = y - a
    return CylinderWord(tuple(digits))


def cylinder_interval(system: IntervalSystem, word) -> tuple[float, float]:
    """Endpoints of the cylinder of ``word`` (sorted)."""
    w = as_word(word).symbols
    if system.kind == "doubling":
        if max(w) > 1:
            raise ValueError("doubling-map words are binary")
        k = int("".join(map(str, w)), 2)
        return k / 2 ** len(w), (k + 1) / 2 ** len(w)
    if min(w) < 1:
        raise ValueError("continued fraction digits are >= 1")
    # convergents p/q of [0; a_1, ..., a_n]
    p_prev, p = 1, 0
    q_prev, q = 0, 1
    for a in w:
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
    lo, hi = p / q, (p + p_prev) / (q + q_prev)
    return (lo, hi) if lo < hi else (hi, lo)


def cylinder_measure(system: IntervalSystem, word) -> float:
    """Invariant measure of a cylinder (closed form)."""
    lo, hi = cylinder_interval(system, word)
    return float(system.cdf(hi) - system.cdf(lo))


def random_word(system: IntervalSystem, n: int, seed: int) -> CylinderWord:
    """A word drawn from the stationary digit process (no genericity claim)."""
    sampler = OrbitSampler(system, seed)
    digits, ok = _symbolic_digits(sampler, 1, n)
    return CylinderWord(tuple(int(d) for d in digits[0]))


@dataclass(frozen=True)
class EmpiricalDistribution:
    counts: np.ndarray
    n_samples: int
    discarded: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if int(counts.sum()) != self.n_samples:
            raise ValueError("counts must sum to n_samples")

    @property
    def probs(self) -> np.ndarray:
        if self.n_samples == 0:
            return np.zeros(len(self.counts))
        return self.counts / self.n_samples

    @property
    def stderr(self) -> np.ndarray:
        p = self.probs
        return np.sqrt(p * (1.0 - p) / max(self.n_samples, 1))

    def prob(self, k: int) -> float:
        return float(self.probs[k]) if k < len(self.counts) else 0.0

    def rows(self) -> list[tuple[int, int, float, float]]:
        return [
            (k, int(c), float(p), float(se))
            for k, (c, p, se) in enumerate(zip(self.counts, self.probs, self.stderr))
        ]

    def merge(self, other: "EmpiricalDistribution") -> "EmpiricalDistribution":
        size = max(len(self.counts), len(other.counts))
        counts = np.zeros(size, dtype=np.int64)
        counts[: len(self.counts)] += self.counts
        counts[: len(other.counts)] += other.counts
        return EmpiricalDistribution(counts, self.n_samples + other.n_samples, self.discarded + other.discarded)


def _symbolic_digits(sampler: OrbitSampler, rows: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    g = sampler.generator
    if sampler.system.kind == "doubling":
        return g.integers(0, 2, size=(rows, length), dtype=np.int8), np.ones(rows, dtype=bool)
    digits = np.empty((rows, length), dtype=np.int64)
    ok = np.ones(rows, dtype=bool)
    y = np.exp2(g.random(rows)) - 1.0
    for j in range(length):
        u = g.random(rows)
        x = u / (1.0 + y - u * y)
        bad = x <= 0.0
        ok &= ~bad
        inv = 1.0 / np.where(bad, 0.5, x)
        a = np.floor(inv)
        digits[:, j] = a.astype(np.int64)
        y = 1.0 / (a + y)
    return digits, ok


def _orbit_digits(sampler: OrbitSampler, rows: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    sysm = sampler.system
    x = sample_stationary(sampler, rows)
    digits = np.empty((rows, length), dtype=np.int64)
    ok = np.ones(rows, dtype=bool)
    for j in range(length):
        bad = x <= 0.0
        if sysm.kind == "gauss":
            inv = 1.0 / np.where(bad, 0.5, x)
            a = np.floor(inv)
            bad |= (inv == a) & (j < length - 1)
            x = inv - a
        else:
            y = 2.0 * x
            a = np.floor(y)
            x = y - a
        ok &= ~bad
        digits[:, j] = a.astype(np.int64)
    return digits, ok


def _count_matches(digits: np.ndarray, word: tuple, N: int) -> np.ndarray:
    match = np.ones((digits.shape[0], N), dtype=bool)
    for i, a in enumerate(word):
        match &= digits[:, i : i + N] == a
    return match.sum(axis=1)


def resolve_symbolic(sysm: IntervalSystem, length: int, symbolic: bool | None) -> bool:
    """Pick the itinerary source; ``None`` means float orbits unless too deep."""
    if symbolic is None:
        symbolic = length > sysm.fidelity_depth
        if symbolic:
            log.warning(
                "itinerary depth %d exceeds binary64 fidelity (%d) for the %s map; "
                "sampling the stationary digit process instead of float orbits",
                length, sysm.fidelity_depth, sysm.kind,
            )
    elif not symbolic and length > sysm.fidelity_depth:
        warnings.warn(
            f"float orbits of the {sysm.kind} map are unreliable beyond depth "
            f"{sysm.fidelity_depth} (requested {length})",
            FidelityWarning,
            stacklevel=3,
        )
    return bool(symbolic)


def mc_count_distribution(
    sampler: OrbitSampler,
    target,
    N: int,
    samples: int,
    symbolic: bool | None = None,
    max_workload: int = DEFAULT_MAX_WORKLOAD,
) -> EmpiricalDistribution:
    """Empirical law of Z^N for the cylinder ``target``.

    Samples whose itinerary hits a boundary are discarded and counted in
    ``discarded``; ``n_samples`` counts only the kept ones.
    """
    word = as_word(target).symbols
    if N < 1 or samples < 1:
        raise ValueError("N and samples must be >= 1")
    sysm = sampler.system
    if sysm.kind == "doubling" and max(word) > 1:
        raise ValueError("doubling-map targets are binary words")
    if sysm.kind == "gauss" and min(word) < 1:
        raise ValueError("Gauss-map targets are words of digits >= 1")
    length = N + len(word) - 1
    if length * samples > max_workload:
        raise ValueError(f"workload N*samples = {length * samples} exceeds the cap {max_workload}")
    symbolic = resolve_symbolic(sysm, length, symbolic)
    produce = _symbolic_digits if symbolic else _orbit_digits
    chunk = max(1, CHUNK_SYMBOLS // length)
    hist = np.zeros(N + 1, dtype=np.int64)
    discarded = 0
    done = 0
    while done < samples:
        rows = min(chunk, samples - done)
        digits, ok = produce(sampler, rows, length)
        counts = _count_matches(digits[ok], word, N)
        hist += np.bincount(counts, minlength=N + 1)[: N + 1]
        discarded += int((~ok).sum())
        done += rows
    if discarded:
        log.info("discarded %d of %d samples at partition boundaries", discarded, samples)
    last = int(np.max(np.nonzero(hist)[0])) if hist.any() else 0
    return EmpiricalDistribution(hist[: last + 1], int(hist.sum()), discarded)


def stream_sizes(samples: int, streams: int) -> list[int]:
    base, extra = divmod(samples, streams)
    return [base + (1 if i < extra else 0) for i in range(streams)]


def run_streams(
    system: IntervalSystem,
    target,
    N: int,
    samples: int,
    seed: int,
    streams: int = 8,
    threads: int = 1,
    symbolic: bool | None = None,
) -> EmpiricalDistribution:
    """Split ``samples`` over fixed streams, evaluate them in parallel, merge in stream order.

    The partition depends only on ``streams``, never on ``threads``, so the
    merged counts are identical for any thread count.
    """
    if streams < 1 or threads < 1:
        raise ValueError("streams and threads must be >= 1")
    sizes = stream_sizes(samples, streams)
    symbolic = resolve_symbolic(system, N + as_word(target).n - 1, symbolic)

    def one(i: int) -> EmpiricalDistribution | None:
        if sizes[i] == 0:
            return None
        return mc_count_distribution(OrbitSampler(system, seed, i), target, N, sizes[i], symbolic)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(one, range(streams)))
    total = EmpiricalDistribution(np.zeros(1, dtype=np.int64), 0, 0)
    for part in parts:
        if part is not None:
            total = total.merge(part)
    return total
