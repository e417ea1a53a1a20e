"""Acceptance criteria, one test each; every test records a pass/fail line."""
import hashlib
import math
import time

import numpy as np
from scipy import stats

from oracles import TEST_CHAINS, all_words, brute_tables
from returnlab import cli
from returnlab.distributions import (
    ClusterLaw,
    CompoundPoissonParams,
    PolyaAeppliParams,
    compound_binomial_pmf_vector,
    compound_poisson_pmf_vector,
    law_from_pmf,
    polya_aeppli_pmf,
    total_variation,
)
from returnlab.interval_mc import DOUBLING, GAUSS, GAUSS_MEAN, OrbitSampler, run_streams, sample_stationary
from returnlab.lemma_checks import convolution_grid, default_words, gf_grid, main_theorem_gap, summarize
from returnlab.limits import (
    alpha_spectrum,
    build_schedule,
    cluster_law_from_counts,
    kac_identity_check,
    lambda_from_alpha,
    limit_scan,
    nested_family,
)
from returnlab.markov_exact import MarkovChainModel, count_distribution_exact, count_sweep, doubling_chain

IID = MarkovChainModel.iid([0.5, 0.5])
DOUBLING_CHAIN = doubling_chain()


def test_01_binomial_oracle(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for L in range(1, 65):
        probs = count_distribution_exact(IID, "0", L, L).probs
        worst = max(worst, float(np.abs(probs - stats.binom.pmf(np.arange(L + 1), L, 0.5)).max()))
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 1.0
    assert acceptance(1, "binomial oracle", ok, f"max error {worst:.2e}, {dt:.2f}s")


def test_02_exhaustive_oracle(acceptance):
    t0 = time.perf_counter()
    worst, cells = 0.0, 0
    for key, chain in TEST_CHAINS.items():
        for n in range(1, 5):
            for w in all_words(chain.m, n):
                counts, cond = brute_tables(key, w, 10)
                sweep = count_sweep(chain, w, 10, 10)
                worst = max(worst, float(np.abs(sweep.probs - counts[:, :11]).max()))
                cells += 10
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and dt < 60
    assert acceptance(2, "exhaustive oracle", ok, f"{cells} (chain, word, L) cells, max error {worst:.2e}, {dt:.1f}s")


def test_03_polya_aeppli_identity(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for lam in (0.5, 1.0, 2.0):
        for theta in np.round(np.arange(0.1, 0.95, 0.1), 10):
            pa = PolyaAeppliParams(lam, float(theta))
            cp = compound_poisson_pmf_vector(CompoundPoissonParams(lam, pa.cluster_law(400)), 50)
            direct = np.array([polya_aeppli_pmf(pa, k) for k in range(51)])
            worst = max(worst, float(np.abs(direct - cp).max()))
    dt = time.perf_counter() - t0
    ok = worst < 1e-10 and dt < 1.0
    assert acceptance(3, "Polya-Aeppli identity", ok, f"max difference {worst:.2e}, {dt:.2f}s")


def test_04_compound_binomial_limit(acceptance):
    t0 = time.perf_counter()
    law = ClusterLaw.geometric(0.5, 80)
    kmax = 80
    cp = law_from_pmf(compound_poisson_pmf_vector(CompoundPoissonParams(1.0, law), kmax))
    tvs = [total_variation(law_from_pmf(compound_binomial_pmf_vector(1.0 / n, n, law, kmax)), cp)
           for n in (10**2, 10**3, 10**4)]
    dt = time.perf_counter() - t0
    ok = tvs[-1] < 1e-3 and tvs[0] > tvs[1] > tvs[2] and dt < 5
    assert acceptance(4, "compound binomial to compound Poisson", ok,
                      "TV " + ", ".join(f"{v:.2e}" for v in tvs) + f", {dt:.2f}s")


def test_05_kac_identity(acceptance):
    t0 = time.perf_counter()
    cells = [(key, w, L)
             for key in ("iid_skew", "two_state", "three_state")
             for w in (["0", "01", "0010", "1101", "0000000"] if TEST_CHAINS[key].m == 2
                       else ["0", "12", "0120", "2222"])
             for L in (1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233, 377, 610, 987)]
    cells = cells[:200]
    worst = max(kac_identity_check(TEST_CHAINS[key], w, L).diff for key, w, L in cells)
    dt = time.perf_counter() - t0
    ok = len(cells) == 200 and worst < 1e-10 and dt < 30
    assert acceptance(5, "Kac identity", ok, f"{len(cells)} cells, max |lhs - rhs| {worst:.2e}, {dt:.2f}s")


def test_06_convolution_lemma(acceptance):
    t0 = time.perf_counter()
    reps = convolution_grid(DOUBLING_CHAIN, default_words(range(2, 13)))
    s = summarize(reps)["convolution"]
    nonvac = s["passed"] + s["failed"]
    exact_cells = []
    for key in ("iid_half", "iid_skew"):
        exact_cells += convolution_grid(TEST_CHAINS[key], ["0", "1"], ks=range(5),
                                        Deltas=None, mode="phi")
    worst_single = max(r.lhs for r in exact_cells)
    dt = time.perf_counter() - t0
    ok = s["failed"] == 0 and nonvac >= 500 and worst_single < 1e-15 and dt < 300
    assert acceptance(6, "convolution lemma", ok,
                      f"{nonvac} non-vacuous cells, {s['failed']} failures, vacuous fraction "
                      f"{s['vacuous_fraction']:.2f}, single-symbol max lhs {worst_single:.1e}, {dt:.1f}s")


def test_07_generating_function_identity(acceptance):
    t0 = time.perf_counter()
    words = default_words(range(2, 7))
    resid, reps = gf_grid(DOUBLING_CHAIN, words, (8, 16, 32), r_max=6, K=12)
    r2, reps2 = gf_grid(TEST_CHAINS["two_state"], ["0", "01", "0010"], (8, 16), r_max=6, K=12)
    resid += r2
    reps += reps2
    worst = max(r["residual"] for r in resid)
    s = summarize(reps)["cauchy"]
    dt = time.perf_counter() - t0
    ok = worst < 1e-12 and s["failed"] == 0 and s["vacuous"] == 0 and dt < 60
    assert acceptance(7, "generating-function identity", ok,
                      f"max residual {worst:.1e}, Cauchy {s['passed']}/{s['cells']} cells pass, {dt:.1f}s")


def test_08_cluster_law_periodic_target(acceptance):
    t0 = time.perf_counter()
    # the exact DP at small (n, L) first agrees with exhaustive enumeration
    small, _ = brute_tables("iid_half", "0000", 10)
    small_err = float(np.abs(count_sweep(TEST_CHAINS["iid_half"], "0000", 10, 10).probs - small[:, :11]).max())
    word, L = "0" * 12, 256
    lam = cluster_law_from_counts(count_distribution_exact(DOUBLING_CHAIN, word, L, 9)).probs
    geo = float(np.abs(lam[:5] - 0.5 ** np.arange(1, 6)).max())
    from_alpha = lambda_from_alpha(alpha_spectrum(DOUBLING_CHAIN, word, L, 9)).probs
    cross = float(np.abs(lam[:8] - from_alpha[:8]).max())
    dt = time.perf_counter() - t0
    ok = small_err < 1e-12 and geo < 0.02 and cross < 0.01 and dt < 60
    assert acceptance(8, "cluster law at periodic target", ok,
                      f"max |lambda_k - 2^-k| {geo:.4f}, alpha cross-check {cross:.4f}, {dt:.2f}s")


def test_09_sequence_diagnostic(acceptance):
    t0 = time.perf_counter()
    res = limit_scan(DOUBLING_CHAIN, nested_family("0", range(6, 15)), [32, 64, 128, 256], K=8)
    hats = [res.lambda_hat[n] for n in range(6, 15)]
    steps = [float(np.abs(b - a).max()) for a, b in zip(hats, hats[1:])]
    dt = time.perf_counter() - t0
    ok = res.diagnostic < 0.02 and dt < 120
    assert acceptance(9, "sequence-theorem diagnostic", ok,
                      f"diagnostic {res.diagnostic:.4f} at n=14, L=256; last lambda_hat step {steps[-1]:.4f}, {dt:.2f}s")


def test_10_main_theorem_gap(acceptance):
    t0 = time.perf_counter()
    sch = build_schedule(nested_family("0", range(6, 17)), 1.0, DOUBLING_CHAIN)
    table = main_theorem_gap(DOUBLING_CHAIN, sch, K=4)
    gap = table.column(0, "gap_cb")
    zero = table.column(0, "mu_N")
    n_last = max(r["n"] for r in table.rows)
    monotone = all(b < a for a, b in zip(gap, gap[1:]))
    dt = time.perf_counter() - t0
    ok = abs(zero[-1] - math.exp(-1)) < 0.02 and monotone and dt < 300
    assert acceptance(10, "main-theorem gap", ok,
                      f"mu(Z^N=0) {zero[-1]:.4f} at n={n_last}, gap {gap[0]:.4f} -> {gap[-1]:.4f}, "
                      f"monotone {monotone}, skipped {table.skipped}, {dt:.1f}s")


def _within_3se(emp, exact, n):
    """Per-bin comparison; bins with expected count below 5 are pooled into one tail bin."""
    exact = np.asarray(exact, dtype=float)
    obs = np.zeros_like(exact)
    obs[: min(len(exact), len(emp.counts))] = emp.probs[: len(exact)]
    keep = exact * n >= 5
    e = np.append(exact[keep], exact[~keep].sum())
    o = np.append(obs[keep], obs[~keep].sum())
    se = np.sqrt(e * (1 - e) / n)
    z = np.abs(o - e) / np.where(se > 0, se, np.inf)
    return float(z.max())


def test_11_monte_carlo_consistency(acceptance):
    t0 = time.perf_counter()
    n = 100_000
    worst = 0.0
    for word, N in (("0", 2), ("0000", 64), ("0" * 10, 1024), ("0110", 200)):
        exact = count_distribution_exact(DOUBLING_CHAIN, word, N, min(N, 64))
        emp = run_streams(DOUBLING, word, N, n, seed=2024, streams=8, threads=4)
        worst = max(worst, _within_3se(emp, np.append(exact.probs, exact.tail_mass), n))
    x = sample_stationary(OrbitSampler(GAUSS, 2024), 1_000_000)
    z_gauss = abs(x.mean() - GAUSS_MEAN) / (x.std() / math.sqrt(len(x)))
    dt = time.perf_counter() - t0
    ok = worst < 3 and z_gauss < 3 and dt < 120
    assert acceptance(11, "Monte Carlo consistency", ok,
                      f"max doubling z {worst:.2f}, Gauss mean z {z_gauss:.2f}, {dt:.1f}s")


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_12_reproducibility(acceptance, tmp_path):
    cfg = tmp_path / "mc.yaml"
    cfg.write_text("system: {map: gauss}\ntarget: {word: '1,1,1'}\nseed: 99\nmc: {N: 500, samples: 40000}\n")
    lem = tmp_path / "lem.yaml"
    lem.write_text("grids: {n: '2..6', windows: [8, 16, 32]}\nlemmas: {which: [convolution, dyadic]}\n")
    digests = {}
    for threads in (1, 4, 8):
        out = tmp_path / f"t{threads}"
        assert cli.main(["mc", "--config", str(cfg), "--out", str(out / "mc"), "--threads", str(threads)]) == 0
        cli.main(["lemmas", "--config", str(lem), "--out", str(out / "lem"), "--threads", str(threads)])
        digests[threads] = tuple(_digest(p) for p in sorted(out.rglob("*.csv")))
    ok = len(set(digests.values())) == 1 and len(digests[1]) >= 3
    assert acceptance(12, "reproducibility across thread counts", ok,
                      f"{len(digests[1])} CSV files identical for threads 1, 4, 8" if ok else "CSV digests differ")
