"""Numerical certification of the quantitative lemmas on exact Markov instances.

Each check returns a :class:`LemmaReport`.  When a lemma's hypotheses fail on
the given instance the report is *vacuous*: it carries the computed numbers
but ``passed`` is ``None`` and it never counts toward pass rates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .distributions import (
    ClusterLaw,
    CompoundPoissonParams,
    compound_binomial_pmf_vector,
    compound_poisson_pmf_vector,
)
from .limits import ScalingSchedule, cluster_law_from_counts
from .markov_exact import (
    CountSweep,
    MarkovChainModel,
    MixingBound,
    as_word,
    count_sweep,
    phi_bound,
    word_measure,
)

MODES = ("phi", "alpha")


def gamma0(gamma: float) -> float:
    """log(2 - gamma) / log(2 + gamma)."""
    return math.log(2.0 - gamma) / math.log(2.0 + gamma)


@dataclass
class LemmaReport:
    lemma: str
    lhs: float
    bound: float
    hypotheses: dict
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    passed: bool | None = None

    @property
    def hypotheses_satisfied(self) -> bool:
        return all(self.hypotheses.values())

    @property
    def vacuous(self) -> bool:
        return not self.hypotheses_satisfied

    @property
    def margin(self) -> float:
        return self.bound - self.lhs

    def row(self) -> dict:
        out = {"lemma": self.lemma, **self.params}
        out.update(
            lhs=self.lhs, bound=self.bound, margin=self.margin,
            vacuous=self.vacuous, passed=self.passed,
        )
        for k, v in self.details.items():
            if isinstance(v, (int, float, bool, str)) or v is None:
                out[k] = v
        return out


def _finish(report: LemmaReport, ok: bool) -> LemmaReport:
    report.passed = bool(ok) if report.hypotheses_satisfied else None
    return report


class Instance:
    """A (chain, word) pair with its count sweep and mixing bound cached."""

    def __init__(self, chain: MarkovChainModel, word, Lmax: int, Kmax: int, mixing: MixingBound | None = None):
        self.chain = chain
        self.word = as_word(word)
        self.n = self.word.n
        self.mu = word_measure(chain, self.word)
        self.sweep: CountSweep = count_sweep(chain, self.word, Lmax, Kmax)
        self.mixing = mixing if mixing is not None else phi_bound(chain)

    def p_hit(self, L: int) -> float:
        return self.sweep.p_hit(L)

    def hit_by(self, Delta: int) -> float:
        """mu(tau_hat <= Delta) = mu(Z^(Delta+1) >= 1)."""
        return self.sweep.p_hit(Delta + 1)

    def prob(self, L: int, k: int) -> float:
        if L <= 0:
            return 1.0 if k == 0 else 0.0
        return float(self.sweep.probs[L, k])


def convolution_defect(
    chain: MarkovChainModel,
    word,
    t_window: int,
    s_window: int,
    Delta: int,
    k: int,
    mode: str = "phi",
    loose: bool = False,
    instance: Instance | None = None,
) -> LemmaReport:
    """|mu(Z^(t+s) = k) - sum_j mu(Z^t = j) mu(Z^s = k - j)| against the mixing bound.

    phi mode: mu(tau^(k+1) > t - Delta) (4 mu(tau_hat <= Delta) + 3 phi(Delta - n)),
    with ``loose=True`` replacing mu(tau_hat <= Delta) by Delta mu(U).
    alpha mode: max(4, k + 1) (mu(tau_hat <= Delta) + alpha(Delta - n)).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    t, s = t_window, s_window
    inst = instance or Instance(chain, word, t + s, k)
    n = inst.n
    hyp = {
        "0<Delta<s/2": 0 < Delta < s / 2,
        "s<=t": s <= t,
    }
    if mode == "phi":
        hyp["Delta>n"] = Delta > n
    joint = inst.prob(t + s, k)
    conv = sum(inst.prob(t, j) * inst.prob(s, k - j) for j in range(k + 1))
    lhs = abs(joint - conv)
    hit_gap = Delta * inst.mu if loose else inst.hit_by(Delta)
    mix = inst.mixing(Delta - n)
    if mode == "phi":
        # mu(tau^(k+1) > t - Delta) = mu(Z^(t - Delta) <= k)
        prefactor = inst.sweep.cdf(t - Delta, k)
        bound = prefactor * (4.0 * hit_gap + 3.0 * mix)
    else:
        prefactor = 1.0
        bound = max(4.0, k + 1.0) * (hit_gap + mix)
    rep = LemmaReport(
        "convolution", lhs, bound, hyp,
        params={"word": str(inst.word), "n": n, "t": t, "s": s, "Delta": Delta, "k": k, "mode": mode},
        details={"joint": joint, "convolution": conv, "prefactor": prefactor,
                 "hit_gap": hit_gap, "mixing": mix},
    )
    return _finish(rep, lhs <= bound)


def galves_schmitt_check(chain: MarkovChainModel, word, t_window: int, s_window: int, Delta: int,
                         instance: Instance | None = None) -> LemmaReport:
    """The k = 0 case with the first-entry bound mu(tau > t - Delta)(4 Delta mu(U) + 2 phi(Delta - n))."""
    t, s = t_window, s_window
    inst = instance or Instance(chain, word, t + s, 0)
    n = inst.n
    hyp = {"0<Delta<s/2": 0 < Delta < s / 2, "s<=t": s <= t, "Delta>n": Delta > n}
    lhs = abs(inst.prob(t + s, 0) - inst.prob(t, 0) * inst.prob(s, 0))
    bound = inst.prob(t - Delta, 0) * (4.0 * Delta * inst.mu + 2.0 * inst.mixing(Delta - n))
    rep = LemmaReport(
        "galves_schmitt", lhs, bound, hyp,
        params={"word": str(inst.word), "n": n, "t": t, "s": s, "Delta": Delta, "k": 0, "mode": "phi"},
    )
    return _finish(rep, lhs <= bound)


def dyadic_lower_bound_check(chain: MarkovChainModel, word, Delta: int, r: int, gamma: float,
                             instance: Instance | None = None) -> LemmaReport:
    """P(Z^(r Delta) >= 1) >= 1/2 r^gamma0 P(Z^Delta >= 1) under its hypotheses.

    ``lhs`` holds the right-hand side 1/2 r^gamma0 P(Z^Delta >= 1) and
    ``bound`` the probability that must dominate it.
    """
    inst = instance or Instance(chain, word, r * Delta, 0)
    g0 = gamma0(gamma)
    p_big = inst.p_hit(r * Delta)
    p_small = inst.p_hit(Delta)
    hyp = {
        "gamma>0": gamma > 0,
        "phi(gamma*Delta)<gamma/2": inst.mixing(int(math.floor(gamma * Delta))) < gamma / 2,
        "P(Z^(r*Delta)>=1)<gamma/2": p_big < gamma / 2,
    }
    lhs = 0.5 * r**g0 * p_small
    rep = LemmaReport(
        "dyadic_lower_bound", lhs, p_big, hyp,
        params={"word": str(inst.word), "n": inst.n, "Delta": Delta, "r": r, "gamma": gamma},
        details={"gamma0": g0, "P_Delta": p_small},
    )
    return _finish(rep, p_big >= lhs)


def ratio_bound_check(chain: MarkovChainModel, word, L: int, r: int, Delta: int, gamma: float,
                      instance: Instance | None = None) -> LemmaReport:
    """1 >= P(Z^(rL) >= 1) / (r P(Z^L >= 1)) >= lower.

    ``lower`` uses 2 (Delta/L)^gamma0; the displayed orientation
    2 (L/Delta)^gamma0 is also computed and kept in ``details``.
    ``lhs`` is the lower bound and ``bound`` the ratio.
    """
    inst = instance or Instance(chain, word, r * L, 0)
    g0 = gamma0(gamma)
    p_rl = inst.p_hit(r * L)
    p_l = inst.p_hit(L)
    ratio = p_rl / (r * p_l) if p_l > 0 else float("nan")
    mix = inst.mixing(Delta)
    lower = 1.0 - p_rl - mix - 2.0 * (Delta / L) ** g0
    lower_displayed = 1.0 - p_rl - mix - 2.0 * (L / Delta) ** g0
    hyp = {
        "0<gamma<1/2": 0 < gamma < 0.5,
        "Delta<L": Delta < L,
        "phi(Delta)<gamma/2": mix < gamma / 2,
        "P(Z^(rL)>=1)<gamma/2": p_rl < gamma / 2,
    }
    rep = LemmaReport(
        "ratio_bound", lower, ratio, hyp,
        params={"word": str(inst.word), "n": inst.n, "L": L, "r": r, "Delta": Delta, "gamma": gamma},
        details={"ratio": ratio, "upper_ok": ratio <= 1.0 + 1e-12,
                 "lower_displayed": lower_displayed, "P_rL": p_rl, "P_L": p_l},
    )
    return _finish(rep, lower <= ratio <= 1.0 + 1e-12)


def k_ratio_check(chain: MarkovChainModel, word, L: int, r: int, k: int, beta: float,
                  gamma: float = 0.1, instance: Instance | None = None) -> LemmaReport:
    """Deviation of P(Z^(rL) = k) / (r P(Z^L = k)) from 1 and its implied constant.

    The constant in the estimate is unspecified, so ``passed`` only records
    finiteness; ``details["implied_constant"]`` is the deviation divided by
    P(Z^(rL) >= 1) + phi(L^beta) + L^-(1-beta) / lambda_k(rL, U).
    """
    inst = instance or Instance(chain, word, r * L, k)
    rl = r * L
    p_rl_k = inst.prob(rl, k)
    p_l_k = inst.prob(L, k)
    p_rl = inst.p_hit(rl)
    if p_rl <= 0 or p_rl_k <= 0:
        raise ValueError(f"lambda_k(rL, U) = 0 for k={k}: the bound term is undefined")
    lam_k = p_rl_k / p_rl
    dev_a = abs(p_rl_k / (r * p_l_k) - 1.0) if p_l_k > 0 else float("inf")
    dev_b = abs(r * p_l_k / p_rl_k - 1.0)
    deviation = max(dev_a, dev_b)
    Lb = int(math.floor(L**beta))
    phi_strict = max(inst.mixing(Lb), inst.mixing(int(math.floor(gamma * L**beta))))
    terms = p_rl + inst.mixing(Lb) + L ** (-(1.0 - beta)) / lam_k
    implied = deviation / terms
    hyp = {
        "phi(gamma*L^beta)<gamma/2": inst.mixing(int(math.floor(gamma * L**beta))) < gamma / 2,
        "phi(L^beta)<gamma/2": inst.mixing(Lb) < gamma / 2,
        "P(Z^(rL)>=1)<gamma/2": p_rl < gamma / 2,
    }
    rep = LemmaReport(
        "k_ratio", deviation, terms, hyp,
        params={"word": str(inst.word), "n": inst.n, "L": L, "r": r, "k": k, "beta": beta, "gamma": gamma},
        details={"deviation_a": dev_a, "deviation_b": dev_b, "lambda_k_rL": lam_k,
                 "P_rL": p_rl, "phi_strict": phi_strict, "implied_constant": implied},
    )
    return _finish(rep, math.isfinite(implied))


@dataclass(frozen=True)
class GeneratingPoly:
    """Coefficients mu_0^s..mu_K^s of F_s(z) = sum_k mu(Z^s = k) z^k."""

    window: int
    coeffs: np.ndarray

    @property
    def K(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, z: float) -> float:
        return float(np.polynomial.polynomial.polyval(z, self.coeffs))

    @classmethod
    def from_sweep(cls, sweep: CountSweep, window: int) -> "GeneratingPoly":
        if window == 0:
            c = np.zeros(sweep.K + 1)
            c[0] = 1.0
            return cls(0, c)
        return cls(window, sweep.probs[window].copy())


def generating_family(chain: MarkovChainModel, word, s: int, r: int, K: int) -> dict:
    """GeneratingPoly for windows 0, s, 2s, ..., rs."""
    sweep = count_sweep(chain, word, r * s, K)
    return {a * s: GeneratingPoly.from_sweep(sweep, a * s) for a in range(r + 1)}


def _mul(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    return np.convolve(a, b)[: K + 1]


def xi_coefficients(family: Mapping[int, GeneratingPoly], s: int, a: int) -> np.ndarray:
    """xi_k^(as) = sum_j mu_j^((a-1)s) mu_(k-j)^s - mu_k^(as); identically zero at a = 1."""
    if a < 1:
        raise ValueError("a must be a positive integer")
    prev, base, cur = family[(a - 1) * s] if a > 1 else None, family[s], family[a * s]
    if a == 1:
        return np.zeros(cur.K + 1)
    if not prev.K == base.K == cur.K:
        raise ValueError("generating polynomials have mismatched truncation")
    return _mul(prev.coeffs, base.coeffs, cur.K) - cur.coeffs


def eta_of(inst: Instance, Delta: int, loose: bool = False) -> float:
    """eta(Delta) = 4 mu(tau_hat <= Delta) + 3 phi(Delta - n); ``loose`` uses 4 Delta mu(U)."""
    hit = Delta * inst.mu if loose else inst.hit_by(Delta)
    return 4.0 * hit + 3.0 * inst.mixing(Delta - inst.n)


def xi_bound_check(chain: MarkovChainModel, word, s: int, a: int, K: int,
                   alpha_exp: float = 0.5, loose: bool = False) -> list[LemmaReport]:
    """|xi_k^(as)| against eta_tilde(s) sum_{j<=k} mu_j^(as), k = 0..K.

    ``details["lemma_bound"]`` uses the window (a-1)s - Delta supported by
    the convolution lemma.
    """
    inst = Instance(chain, word, a * s, K)
    fam = {w: GeneratingPoly.from_sweep(inst.sweep, w) for w in {0, s, (a - 1) * s, a * s}}
    xi = xi_coefficients(fam, s, a)
    Delta = max(1, int(math.floor(s**alpha_exp)))
    eta_t = eta_of(inst, Delta, loose)
    out = []
    for k in range(K + 1):
        displayed = eta_t * inst.sweep.cdf(a * s, k)
        lemma_bound = eta_t * inst.sweep.cdf((a - 1) * s - Delta, k)
        hyp = {"a>=2": a >= 2, "0<Delta<s/2": 0 < Delta < s / 2}
        rep = LemmaReport(
            "xi_bound", abs(float(xi[k])), displayed, hyp,
            params={"word": str(inst.word), "n": inst.n, "s": s, "a": a, "k": k, "Delta": Delta},
            details={"xi": float(xi[k]), "eta_tilde": eta_t, "lemma_bound": lemma_bound},
        )
        out.append(_finish(rep, abs(float(xi[k])) <= displayed))
    return out


def _power(poly: np.ndarray, e: int, K: int) -> np.ndarray:
    out = np.zeros(K + 1)
    out[0] = 1.0
    for _ in range(e):
        out = _mul(out, poly, K)
    return out


def gf_identity_residual(family: Mapping[int, GeneratingPoly], s: int, r: int, K: int) -> float:
    """max_k |[z^k] (F_s^r - F_rs - sum_{j=2..r} G_j F_s^(r-j))|.

    G_j(z) = sum_k (conv(mu^((j-1)s), mu^s) - mu^(js))_k z^k.  Truncating
    every product at degree K is exact for the coefficients kept.
    """
    if r < 2:
        raise ValueError("r must be > 1")
    Fs = family[s].coeffs[: K + 1]
    lhs = _power(Fs, r, K)
    rhs = family[r * s].coeffs[: K + 1].copy()
    for j in range(2, r + 1):
        G = xi_coefficients(family, s, j)[: K + 1]
        rhs += _mul(G, _power(Fs, r - j, K), K)
    return float(np.abs(lhs - rhs).max())


def error_coefficients(family: Mapping[int, GeneratingPoly], s: int, r: int, K: int) -> np.ndarray:
    """Coefficients of E_s^r = F_s^r - F_rs up to degree K."""
    return _power(family[s].coeffs[: K + 1], r, K) - family[r * s].coeffs[: K + 1]


def cauchy_error_check(family: Mapping[int, GeneratingPoly], s: int, r: int, K: int,
                       eta_tilde: float, params: dict | None = None) -> list[LemmaReport]:
    """|[z^k] E_s^r| <= e r eta_tilde(s) (k + 1) for k = 0..K."""
    E = error_coefficients(family, s, r, K)
    out = []
    for k in range(K + 1):
        bound = math.e * r * eta_tilde * (k + 1)
        rep = LemmaReport(
            "cauchy", abs(float(E[k])), bound, {"r>1": r > 1},
            params={**(params or {}), "s": s, "r": r, "k": k},
            details={"E_k": float(E[k]), "eta_tilde": eta_tilde},
        )
        out.append(_finish(rep, abs(float(E[k])) <= bound))
    return out


def cauchy_check_instance(chain: MarkovChainModel, word, s: int, r: int, K: int,
                          alpha_exp: float = 0.5) -> list[LemmaReport]:
    """Cauchy check with eta_tilde(s) = eta(floor(s^alpha_exp)) computed on the instance."""
    inst = Instance(chain, word, r * s, K)
    fam = {a * s: GeneratingPoly.from_sweep(inst.sweep, a * s) for a in range(r + 1)}
    Delta = max(1, int(math.floor(s**alpha_exp)))
    eta_t = eta_of(inst, Delta)
    return cauchy_error_check(fam, s, r, K, eta_t,
                              params={"word": str(inst.word), "n": inst.n, "Delta": Delta})


@dataclass
class GapTable:
    rows: list
    skipped: list

    def column(self, k: int, key: str = "gap_cb") -> list[float]:
        return [r[key] for r in self.rows if r["k"] == k]


def main_theorem_gap(chain: MarkovChainModel, schedule: ScalingSchedule, K: int = 4,
                     cluster_K: int = 32, max_window: int = 200_000) -> GapTable:
    """Compare mu(Z^(N_n) = k) with the compound binomial and compound Poisson laws.

    The compound binomial uses p_n, the integer block count round(r_n) and the
    block cluster law lambda_hat(n); the window is N_n = blocks * s_n.
    """
    rows, skipped = [], []
    for e in schedule.entries:
        if e.window > max_window:
            skipped.append(e.n)
            continue
        sweep = count_sweep(chain, e.word, e.window, max(K, cluster_K))
        law = cluster_law_from_counts(sweep.at(e.s))
        kk = min(K, law.K)
        mu_N = sweep.probs[e.window]
        cb = compound_binomial_pmf_vector(e.p, e.blocks, law, kk)
        cp = compound_poisson_pmf_vector(CompoundPoissonParams(schedule.t, law), kk)
        for k in range(kk + 1):
            rows.append(
                {
                    "n": e.n, "k": k, "s": e.s, "blocks": e.blocks, "N": e.window,
                    "p": e.p, "mu_N": float(mu_N[k]), "cb": float(cb[k]), "cp": float(cp[k]),
                    "gap_cb": float(abs(mu_N[k] - cb[k])),
                    "gap_cp": float(abs(cb[k] - cp[k])),
                }
            )
    return GapTable(rows, skipped)


# ---------------------------------------------------------------- grids

def default_words(depths=range(2, 13)) -> list:
    """Doubling-chain words per depth: the fixed-point word 0^n, the
    period-two word 0101.. and the aperiodic 0^(n-1)1."""
    out = []
    for n in depths:
        for w in ("0" * n, ("01" * n)[:n], "0" * (n - 1) + "1"):
            if w not in out:
                out.append(w)
    return out


def _map_cells(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def convolution_grid(chain: MarkovChainModel, words: Sequence, windows: Sequence[int] = (8, 16, 32, 64),
                     ks: Sequence[int] = range(5), Deltas: Sequence[int] | None = None,
                     mode: str = "phi", loose: bool = False, threads: int = 1) -> list[LemmaReport]:
    """All cells (word, t = s, Delta, k); Delta defaults to n+1 .. s/2 - 1."""
    mixing = phi_bound(chain)
    kmax = max(ks)

    def per_word(w):
        inst = Instance(chain, w, 2 * max(windows), kmax, mixing)
        reps = []
        for s in windows:
            deltas = Deltas if Deltas is not None else range(inst.n + 1, (s + 1) // 2)
            for D in deltas:
                for k in ks:
                    reps.append(convolution_defect(chain, w, s, s, D, k, mode, loose, inst))
        return reps

    return [r for reps in _map_cells(per_word, list(words), threads) for r in reps]


def dyadic_grid(chain, words, Deltas, rs, gamma=0.1, threads=1) -> list[LemmaReport]:
    mixing = phi_bound(chain)

    def per_word(w):
        inst = Instance(chain, w, max(Deltas) * max(rs), 0, mixing)
        return [dyadic_lower_bound_check(chain, w, D, r, gamma, inst) for D in Deltas for r in rs]

    return [r for reps in _map_cells(per_word, list(words), threads) for r in reps]


def ratio_grid(chain, words, Ls, rs, Deltas, gamma=0.1, threads=1) -> list[LemmaReport]:
    mixing = phi_bound(chain)

    def per_word(w):
        inst = Instance(chain, w, max(Ls) * max(rs), 0, mixing)
        return [ratio_bound_check(chain, w, L, r, D, gamma, inst)
                for L in Ls for r in rs for D in Deltas if D < L]

    return [r for reps in _map_cells(per_word, list(words), threads) for r in reps]


def k_ratio_grid(chain, words, Ls, rs, ks, beta=0.5, gamma=0.1, threads=1) -> list[LemmaReport]:
    mixing = phi_bound(chain)

    def per_word(w):
        inst = Instance(chain, w, max(Ls) * max(rs), max(ks), mixing)
        return [k_ratio_check(chain, w, L, r, k, beta, gamma, inst) for L in Ls for r in rs for k in ks]

    return [r for reps in _map_cells(per_word, list(words), threads) for r in reps]


def gf_grid(chain, words, windows, r_max=6, K=12, alpha_exp=0.5, threads=1) -> tuple[list[dict], list[LemmaReport]]:
    """Identity residuals for r = 2..r_max and the Cauchy bound on every (word, s, r, k)."""

    def per_word(w):
        res, reps = [], []
        for s in windows:
            inst = Instance(chain, w, r_max * s, K)
            fam = {a * s: GeneratingPoly.from_sweep(inst.sweep, a * s) for a in range(r_max + 1)}
            Delta = max(1, int(math.floor(s**alpha_exp)))
            eta_t = eta_of(inst, Delta)
            for r in range(2, r_max + 1):
                res.append({"word": str(inst.word), "n": inst.n, "s": s, "r": r, "K": K,
                            "residual": gf_identity_residual(fam, s, r, K)})
                reps += cauchy_error_check(fam, s, r, K, eta_t,
                                           params={"word": str(inst.word), "n": inst.n, "Delta": Delta})
        return res, reps

    out = _map_cells(per_word, list(words), threads)
    return [x for a, _ in out for x in a], [x for _, b in out for x in b]


def summarize(reports: Sequence[LemmaReport]) -> dict:
    """Pass counts per lemma; vacuous cells are counted separately, never as passes."""
    summary: dict = {}
    for rep in reports:
        s = summary.setdefault(rep.lemma, {"cells": 0, "vacuous": 0, "passed": 0, "failed": 0})
        s["cells"] += 1
        if rep.vacuous:
            s["vacuous"] += 1
        elif rep.passed:
            s["passed"] += 1
        else:
            s["failed"] += 1
    for s in summary.values():
        s["vacuous_fraction"] = s["vacuous"] / s["cells"] if s["cells"] else 0.0
    return summary
