"""Compound Poisson family: pmfs, generating functions, distances.

All laws are carried with an explicit ``tail_mass`` for whatever mass lies
beyond the tabulated support, so truncation error is never hidden by
renormalisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats

SUM_TOL = 1e-12
# tail mass below this is treated as "no mass beyond the table"
TAIL_TOL = 1e-12


def _check_mass(probs: np.ndarray, tail_mass: float, what: str, tol: float = SUM_TOL) -> None:
    if np.any(probs < 0) or tail_mass < 0:
        raise ValueError(f"{what}: probabilities must be nonnegative")
    total = float(probs.sum()) + tail_mass
    if abs(total - 1.0) > tol:
        raise ValueError(f"{what}: mass sums to {total!r}, expected 1")


@dataclass(frozen=True)
class DiscreteLaw:
    """Law on {0, 1, ..., K} plus the mass ``tail_mass`` sitting above K."""

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tail_mass", float(self.tail_mass))
        _check_mass(probs, self.tail_mass, "DiscreteLaw")

    @property
    def support_max(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        """Mean of the tabulated part (exact when ``tail_mass`` is 0)."""
        return float(np.arange(len(self.probs)) @ self.probs)


@dataclass(frozen=True)
class ClusterLaw:
    """Cluster-size probabilities lambda_1, ..., lambda_K.

    ``probs[0]`` is the probability of a cluster of size one; sizes start
    at one because clusters are nonempty.
    """

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "tail_mass", float(self.tail_mass))
        if probs.ndim != 1 or len(probs) == 0:
            raise ValueError("ClusterLaw needs at least lambda_1")
        _check_mass(probs, self.tail_mass, "ClusterLaw")

    @property
    def K(self) -> int:
        return len(self.probs)

    def prob(self, k: int) -> float:
        """lambda_k, zero outside 1..K."""
        if 1 <= k <= self.K:
            return float(self.probs[k - 1])
        return 0.0

    def mean(self) -> float:
        return float(np.arange(1, self.K + 1) @ self.probs)

    def as_discrete(self) -> DiscreteLaw:
        """The same law indexed from 0 (with zero mass at 0)."""
        return DiscreteLaw(np.concatenate([[0.0], self.probs]), self.tail_mass)

    @classmethod
    def geometric(cls, theta: float, K: int) -> "ClusterLaw":
        """lambda_j = (1 - theta) theta^(j-1), j = 1..K, remainder theta^K in the tail."""
        if not 0.0 <= theta < 1.0:
            raise ValueError(f"geometric cluster law needs 0 <= theta < 1, got {theta}")
        j = np.arange(K)
        probs = (1.0 - theta) * theta**j
        return cls(probs, theta**K)

    @classmethod
    def point(cls) -> "ClusterLaw":
        """All clusters have size one (plain Poisson limit)."""
        return cls(np.array([1.0]), 0.0)


@dataclass(frozen=True)
class CompoundPoissonParams:
    t: float
    law: ClusterLaw

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"compound Poisson intensity must be positive, got {self.t}")


@dataclass(frozen=True)
class PolyaAeppliParams:
    lam: float
    theta: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"Polya-Aeppli lambda must be positive, got {self.lam}")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(
                f"Polya-Aeppli theta must lie in [0, 1), got {self.theta}; "
                "theta = 1 is degenerate under the geometric convention "
                "lambda_j = (1 - theta) theta^(j-1) (every pmf value at k >= 1 vanishes)"
            )

    def cluster_law(self, K: int) -> ClusterLaw:
        return ClusterLaw.geometric(self.theta, K)


def _check_truncation(law: ClusterLaw, k: int) -> None:
    if k > law.K and law.tail_mass > TAIL_TOL:
        raise ValueError(
            f"cluster law tabulated up to K={law.K} with tail mass {law.tail_mass:.3g}; "
            f"cannot resolve k={k}"
        )


@lru_cache(maxsize=256)
def _convolution_powers_cached(probs: tuple, kmax: int) -> np.ndarray:
    lam = np.zeros(kmax + 1)
    m = min(len(probs), kmax)
    lam[1 : m + 1] = probs[:m]
    # powers[i, k] = P(S_i = k); S_0 = 0
    powers = np.zeros((kmax + 1, kmax + 1))
    powers[0, 0] = 1.0
    for i in range(1, kmax + 1):
        powers[i] = np.convolve(powers[i - 1], lam)[: kmax + 1]
    powers.setflags(write=False)
    return powers


def convolution_powers(law: ClusterLaw, kmax: int) -> np.ndarray:
    """Table ``P[i, k] = P(X_1 + ... + X_i = k)`` for 0 <= i, k <= kmax.

    Sizes are at least one, so ``S_i`` exceeds ``kmax`` whenever ``i > kmax``
    and the table is complete for every count up to ``kmax``.
    """
    return _convolution_powers_cached(tuple(law.probs.tolist()), int(kmax))


def compound_poisson_pmf_vector(params: CompoundPoissonParams, kmax: int) -> np.ndarray:
    """P(W = k) for k = 0..kmax."""
    _check_truncation(params.law, kmax)
    powers = convolution_powers(params.law, kmax)
    weights = stats.poisson.pmf(np.arange(kmax + 1), params.t)
    return weights @ powers


def compound_poisson_pmf(params: CompoundPoissonParams, k: int) -> float:
    """P(W = k) for W a Poisson(t)-indexed sum of i.i.d. cluster sizes."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return math.exp(-params.t)
    return float(compound_poisson_pmf_vector(params, k)[k])


def polya_aeppli_pmf(params: PolyaAeppliParams, k: int) -> float:
    """Closed-form Polya-Aeppli pmf.

    exp(-lam) * sum_{j=1..k} theta^(k-j) (1-theta)^j lam^j / j! * C(k-1, j-1)
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    lam, theta = params.lam, params.theta
    if k == 0:
        return math.exp(-lam)
    total = 0.0
    for j in range(1, k + 1):
        total += (
            theta ** (k - j)
            * (1.0 - theta) ** j
            * math.exp(j * math.log(lam) - math.lgamma(j + 1))
            * math.comb(k - 1, j - 1)
        )
    return math.exp(-lam) * total


def compound_binomial_pmf_vector(p: float, n: int, law: ClusterLaw, kmax: int) -> np.ndarray:
    """P(sum_{i=1..B} X_i = k), B ~ Binomial(n, p), for k = 0..kmax."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    _check_truncation(law, kmax)
    powers = convolution_powers(law, kmax)
    weights = stats.binom.pmf(np.arange(kmax + 1), n, p)
    return weights @ powers


def compound_binomial_pmf(p: float, n: int, law: ClusterLaw, k: int) -> float:
    if k < 0:
        raise ValueError("k must be nonnegative")
    return float(compound_binomial_pmf_vector(p, n, law, k)[k])


def compound_binomial_pgf(p: float, n: int, law: ClusterLaw, z: float) -> float:
    """(1 - p (1 - phi(z)))^n with phi the cluster-size pgf."""
    phi = pgf_eval(law.as_discrete(), z)
    return (1.0 - p * (1.0 - phi)) ** n


def pgf_eval(law: DiscreteLaw, z: float) -> float:
    """sum_k p_k z^k over the tabulated support."""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"z must lie in [0, 1], got {z}")
    return float(np.polynomial.polynomial.polyval(z, law.probs))


def law_from_pmf(probs: Sequence[float]) -> DiscreteLaw:
    """Wrap a truncated pmf, assigning the missing mass to the tail.

    Tiny negative rounding residue in the tail is clipped to zero.
    """
    probs = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    tail = 1.0 - float(probs.sum())
    if tail < 0:
        if tail < -1e-10:
            raise ValueError(f"pmf sums to {1 - tail!r} > 1")
        probs = probs / probs.sum()
        tail = 0.0
    return DiscreteLaw(probs, tail)


def total_variation(a: DiscreteLaw, b: DiscreteLaw) -> float:
    """Half the l1 distance, the two tails compared as one extra atom."""
    size = max(len(a.probs), len(b.probs))
    pa = np.zeros(size)
    pb = np.zeros(size)
    pa[: len(a.probs)] = a.probs
    pb[: len(b.probs)] = b.probs
    return 0.5 * float(np.abs(pa - pb).sum()) + 0.5 * abs(a.tail_mass - b.tail_mass)


def truncation_point(params: CompoundPoissonParams, mass: float = 1.0 - 1e-12, kcap: int = 2000) -> int:
    """Smallest K whose cumulative compound Poisson mass exceeds ``mass``."""
    k = 16
    while k <= kcap:
        cum = np.cumsum(compound_poisson_pmf_vector(params, k))
        hit = np.nonzero(cum > mass)[0]
        if len(hit):
            return int(hit[0])
        k *= 2
    raise ValueError(f"compound Poisson mass did not reach {mass} by k={kcap}")
