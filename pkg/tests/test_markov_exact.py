import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import TEST_CHAINS, brute_tables
from returnlab.markov_exact import (
    ChainError,
    CylinderWord,
    MarkovChainModel,
    WordError,
    as_word,
    automaton_table,
    conditional_return_counts,
    conditional_return_tail,
    count_distribution_exact,
    count_sweep,
    doubling_chain,
    entry_time_tail,
    failure_function,
    phi_bound,
    word_measure,
)

IID = MarkovChainModel.iid([0.5, 0.5])
TWO = MarkovChainModel([[0.9, 0.1], [0.2, 0.8]])


class TestChain:
    def test_stationary_solved(self):
        assert TWO.stationary == pytest.approx([2 / 3, 1 / 3], abs=1e-14)

    def test_row_sum_error_names_row(self):
        with pytest.raises(ChainError, match="row 1"):
            MarkovChainModel([[0.5, 0.5], [0.5, 0.4]])

    def test_negative_rejected(self):
        with pytest.raises(ChainError):
            MarkovChainModel([[1.2, -0.2], [0.5, 0.5]])

    def test_periodic_rejected(self):
        with pytest.raises(ChainError):
            MarkovChainModel([[0, 1], [1, 0]])

    def test_reducible_rejected(self):
        with pytest.raises(ChainError):
            MarkovChainModel([[1, 0], [0.5, 0.5]])

    def test_bad_stationary(self):
        with pytest.raises(ChainError):
            MarkovChainModel([[0.9, 0.1], [0.2, 0.8]], stationary=[0.5, 0.5])

    def test_mapping_roundtrip(self):
        again = MarkovChainModel.from_mapping(TWO.to_mapping())
        assert np.array_equal(again.transition, TWO.transition)

    def test_doubling_is_fair_iid(self):
        assert np.allclose(doubling_chain().transition, 0.5)


class TestWords:
    def test_parse(self):
        assert as_word("0010").symbols == (0, 0, 1, 0)
        assert as_word("1,12,3").symbols == (1, 12, 3)
        assert as_word([2, 2]).n == 2

    def test_empty_word(self):
        with pytest.raises(WordError):
            CylinderWord(())

    def test_failure_function(self):
        # indexed by prefix length
        assert failure_function((0, 1, 0, 1, 1)) == [0, 0, 0, 1, 2, 0]
        assert failure_function((0, 0, 0)) == [0, 0, 1, 2]

    def test_automaton_matches_naive(self):
        w = (0, 1, 0, 0, 1)
        table = automaton_table(w, 2)
        for q in range(len(w) + 1):
            for a in range(2):
                s = w[:q] + (a,)
                best = max(k for k in range(len(s) + 1) if k <= len(w) and s[len(s) - k :] == w[:k])
                assert table[q, a] == best

    def test_word_measure(self):
        assert word_measure(IID, "00") == pytest.approx(0.25)
        assert word_measure(IID, "0" * 9) == pytest.approx(2.0**-9)
        assert word_measure(TWO, "01") == pytest.approx(2 / 3 * 0.1)

    def test_symbol_outside_alphabet(self):
        with pytest.raises(WordError):
            count_distribution_exact(IID, "02", 3)

    def test_zero_measure_word(self):
        chain = MarkovChainModel([[0.5, 0.5, 0.0], [0.3, 0.3, 0.4], [0.5, 0.5, 0.0]])
        with pytest.raises(WordError):
            count_distribution_exact(chain, "22", 3)


class TestCounts:
    def test_single_symbol_binomial(self):
        assert count_distribution_exact(IID, "0", 2, 2).probs == pytest.approx([0.25, 0.5, 0.25])

    def test_word_00(self):
        assert count_distribution_exact(IID, "00", 2, 2).probs == pytest.approx([5 / 8, 1 / 4, 1 / 8], abs=1e-15)

    @pytest.mark.parametrize("key", sorted(TEST_CHAINS))
    def test_one_trial(self, key):
        chain = TEST_CHAINS[key]
        w = "01" if chain.m > 1 else "0"
        d = count_distribution_exact(chain, w, 1, 1)
        mu = word_measure(chain, w)
        assert d.probs == pytest.approx([1 - mu, mu], abs=1e-15)

    def test_kmax_above_window(self):
        with pytest.raises(ValueError):
            count_distribution_exact(IID, "0", 3, 4)

    def test_default_kmax(self):
        assert count_distribution_exact(IID, "0", 100).Kmax == 64

    def test_tail_mass(self):
        d = count_distribution_exact(IID, "0", 10, 3)
        assert d.tail_mass == pytest.approx(sum(math.comb(10, k) for k in range(4, 11)) / 2**10)
        assert d.probs.sum() + d.tail_mass == pytest.approx(1.0)

    @pytest.mark.parametrize("key", ["two_state", "three_state"])
    @pytest.mark.parametrize("word", ["0", "01", "010", "0110", "11"])
    def test_against_enumeration(self, key, word):
        counts, cond = brute_tables(key, word, 8)
        sweep = count_sweep(TEST_CHAINS[key], word, 8, 8)
        assert np.abs(sweep.probs - counts[:, :9]).max() < 1e-12
        table = conditional_return_counts(TEST_CHAINS[key], word, 8, 8)
        assert np.abs(table - cond[:, :9]).max() < 1e-12

    def test_rows(self):
        d = count_distribution_exact(IID, "0", 2, 2)
        assert d.rows() == [(2, 0, 0.25), (2, 1, 0.5), (2, 2, 0.25)]

    def test_window_additivity_single_symbol(self):
        t, s = 7, 5
        a = count_distribution_exact(IID, "1", t, t).probs
        b = count_distribution_exact(IID, "1", s, s).probs
        ab = count_distribution_exact(IID, "1", t + s, t + s).probs
        assert np.abs(np.convolve(a, b) - ab).max() < 1e-15

    @settings(max_examples=25, deadline=None)
    @given(
        word=st.lists(st.integers(0, 1), min_size=1, max_size=5),
        ext=st.lists(st.integers(0, 1), min_size=1, max_size=3),
        L=st.integers(1, 40),
    )
    def test_nesting_monotone(self, word, ext, L):
        short = CylinderWord(tuple(word))
        long = short.extend(ext)
        for chain in (IID, TWO):
            p_short = count_distribution_exact(chain, short, L, 1).p_hit
            p_long = count_distribution_exact(chain, long, L, 1).p_hit
            assert p_long <= p_short + 1e-15

    @settings(max_examples=25, deadline=None)
    @given(word=st.lists(st.integers(0, 1), min_size=1, max_size=6), Lmax=st.integers(1, 60))
    def test_zero_bin_nonincreasing(self, word, Lmax):
        sweep = count_sweep(TWO, CylinderWord(tuple(word)), Lmax, 2)
        assert np.all(np.diff(sweep.probs[:, 0]) <= 1e-15)
        assert np.allclose(sweep.probs.sum(axis=1) + sweep.tail, 1.0, atol=1e-12)


class TestEntryAndReturn:
    def test_entry_geometric(self):
        tail = entry_time_tail(IID, "0", 12)
        assert tail == pytest.approx(0.5 ** np.arange(13), abs=1e-15)

    def test_entry_00(self):
        tail = entry_time_tail(IID, "00", 4)
        assert tail[0] == 1.0
        assert tail[2] == pytest.approx(5 / 8)
        assert tail[2] == count_distribution_exact(IID, "00", 2, 2).probs[0]

    def test_return_00(self):
        assert conditional_return_tail(IID, "00", 2, 1)[1] == pytest.approx(0.5)

    @pytest.mark.parametrize("word", ["0", "01", "0010"])
    def test_return_at_one_is_one(self, word):
        assert conditional_return_tail(TWO, word, 1, 1)[0] == pytest.approx(1.0)

    def test_return_geometric_single_symbol(self):
        tail = conditional_return_tail(IID, "0", 10, 1)
        assert tail == pytest.approx(0.5 ** np.arange(10), abs=1e-15)

    def test_monotone_in_k_and_l(self):
        prev = None
        for k in range(1, 5):
            tail = conditional_return_tail(TWO, "00", 30, k)
            assert np.all(np.diff(tail) <= 1e-15)
            if prev is not None:
                assert np.all(tail >= prev - 1e-15)
            prev = tail

    def test_bad_k(self):
        with pytest.raises(ValueError):
            conditional_return_tail(IID, "0", 4, 0)


class TestPhiBound:
    def test_iid_zero(self):
        b = phi_bound(IID)
        assert b.rho == 0.0
        assert b(1) == 0.0
        assert b(0) == 1.0

    def test_two_state(self):
        assert phi_bound(TWO).rho == pytest.approx(0.7)

    def test_non_scrambling_uses_power(self):
        chain = MarkovChainModel([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.5, 0.5, 0.0]])
        b = phi_bound(chain)
        assert b.block > 1
        assert 0 < b.rho < 1

    def test_bound_dominates_true_decay(self):
        chain = TEST_CHAINS["three_state"]
        b = phi_bound(chain)
        P = chain.transition
        Pk = np.eye(3)
        for k in range(1, 20):
            Pk = Pk @ P
            tv = 0.5 * np.abs(Pk - chain.stationary).sum(axis=1).max()
            assert tv <= b(k - 1) + 1e-14
