import itertools

import numpy as np
import pytest

from signform.errors import SignSetMismatchError
from signform.lexicon import Lexicon, Phone, PhoneInventory, Sign
from signform.phonesthemes import (
    AffixCandidate,
    _subset_means,
    enumerate_candidates,
    mine,
    phonestheme_test,
    pointwise_affix_mi,
    pointwise_mi_table,
    reverse_forms,
)
from signform.stats import bh_correct
from signform.synthbench import generate, planted_prefix_spec

from oracle_utils import loss_from_bits, oracle_loss_tables


def make_lex(forms, lemmas=None, dim=2, language="toy"):
    lemmas = lemmas or [f"w{i}" for i in range(len(forms))]
    phones = sorted({ch for f in forms for ch in f})
    inv = PhoneInventory.from_phones(Phone(p) for p in phones)
    signs = [Sign(lemma=lm, form=tuple(Phone(ch) for ch in f),
                  meaning=np.zeros(dim), pos="N")
             for lm, f in zip(lemmas, forms)]
    return Lexicon(language=language, inventory=inv, signs=signs,
                   classes=("N",))


def random_tables(lex, rng, gap_scale=1.0):
    """Aligned (uncond, cond) loss tables with i.i.d. noise deltas."""
    uncond, cond = [], []
    for sign in lex.signs:
        n = len(sign.form) + 1
        ub = rng.uniform(1.0, 4.0, size=n)
        cb = ub - gap_scale * rng.normal(size=n)
        uncond.append(loss_from_bits(sign.key, ub))
        cond.append(loss_from_bits(sign.key, cb))
    return uncond, cond


def ks_uniform(p):
    p = np.sort(np.asarray(p, dtype=np.float64))
    n = p.size
    up = np.max(np.arange(1, n + 1) / n - p)
    down = np.max(p - np.arange(n) / n)
    return max(up, down)


class TestPointwiseAffixMI:
    def test_hand_values(self):
        ub = [2.0, 3.0, 4.0]
        cb = [1.0, 1.0, 1.0]
        assert pointwise_affix_mi(ub, cb, 1) == pytest.approx(1.0)
        assert pointwise_affix_mi(ub, cb, 2) == pytest.approx(1.5)
        assert pointwise_affix_mi(ub, cb, 3) == pytest.approx(2.0)

    def test_full_k_equals_per_phone_delta(self):
        rng = np.random.default_rng(0)
        ub = rng.uniform(1, 3, size=6)
        cb = rng.uniform(0.5, 2.5, size=6)
        want = (ub.sum() - cb.sum()) / 6
        assert pointwise_affix_mi(ub, cb, 6) == pytest.approx(want, abs=1e-12)

    def test_errors(self):
        with pytest.raises(SignSetMismatchError):
            pointwise_affix_mi([1.0, 2.0], [1.0], 1)
        with pytest.raises(ValueError):
            pointwise_affix_mi([1.0, 2.0], [1.0, 2.0], 0)
        with pytest.raises(ValueError):
            pointwise_affix_mi([1.0, 2.0], [1.0, 2.0], 3)
        with pytest.raises(ValueError):
            pointwise_affix_mi([1.0], [1.0], 1, side="infix")


class TestPointwiseMITable:
    def test_nan_for_short_words(self):
        lex = make_lex(["ka", "t", "tam"])
        rng = np.random.default_rng(1)
        u, c = random_tables(lex, rng)
        table = pointwise_mi_table(lex, u, c, k=2)
        assert not np.isnan(table[0])
        assert np.isnan(table[1])
        assert not np.isnan(table[2])
        want = ((u[2].position_bits - c[2].position_bits)[:2]).mean()
        assert table[2] == pytest.approx(want, abs=1e-12)

    def test_misaligned_tables_rejected(self):
        lex = make_lex(["ka", "ta", "ma"])
        rng = np.random.default_rng(2)
        u, c = random_tables(lex, rng)
        with pytest.raises(SignSetMismatchError):
            pointwise_mi_table(lex, u[::-1], c[::-1], k=1)
        with pytest.raises(SignSetMismatchError):
            pointwise_mi_table(lex, u[:-1], c[:-1], k=1)


class TestEnumerateCandidates:
    def test_prefix_hand_counts(self):
        lex = make_lex(["ka", "kat", "ta", "t"])
        cands = enumerate_candidates(lex, (1, 2), "prefix", min_count=1)
        by_key = {(c.k, "".join(c.phones)): c for c in cands}
        assert by_key[(1, "k")].count == 2
        assert by_key[(1, "t")].count == 2
        assert by_key[(2, "ka")].count == 2
        assert by_key[(2, "ta")].count == 1
        assert len(cands) == 4
        np.testing.assert_array_equal(by_key[(1, "k")].word_indices, [0, 1])

    def test_suffix_hand_counts(self):
        lex = make_lex(["ka", "kat", "ta", "t"])
        cands = enumerate_candidates(lex, (1, 2), "suffix", min_count=1)
        by_key = {(c.k, "".join(c.phones)): c for c in cands}
        assert by_key[(1, "a")].count == 2
        assert by_key[(1, "t")].count == 2
        assert by_key[(2, "ka")].count == 1
        assert by_key[(2, "at")].count == 1
        assert by_key[(2, "ta")].count == 1

    def test_min_count_filters(self):
        lex = make_lex(["ka", "kat", "ta", "t"])
        cands = enumerate_candidates(lex, (1, 2), "prefix", min_count=2)
        keys = {(c.k, "".join(c.phones)) for c in cands}
        assert keys == {(1, "k"), (1, "t"), (2, "ka")}

    def test_short_words_never_contribute(self):
        lex = make_lex(["t", "ta"])
        cands = enumerate_candidates(lex, (2,), "prefix", min_count=1)
        assert len(cands) == 1
        np.testing.assert_array_equal(cands[0].word_indices, [1])

    def test_partition_of_eligible_words(self):
        rng = np.random.default_rng(3)
        forms = ["".join(rng.choice(list("akt"), size=rng.integers(1, 5)))
                 for _ in range(60)]
        lex = make_lex(forms, lemmas=[str(i) for i in range(60)])
        for k in (1, 2, 3):
            cands = enumerate_candidates(lex, (k,), "prefix", min_count=1)
            seen = np.concatenate([c.word_indices for c in cands]) \
                if cands else np.array([], dtype=np.int64)
            eligible = [i for i, s in enumerate(lex.signs)
                        if len(s.form) >= k]
            assert sorted(seen.tolist()) == eligible

    def test_deterministic_order(self):
        lex = make_lex(["ka", "kat", "ta", "t"])
        a = enumerate_candidates(lex, (2, 1), "prefix", min_count=1)
        b = enumerate_candidates(lex, (1, 2), "prefix", min_count=1)
        assert [(c.k, c.phones) for c in a] == [(c.k, c.phones) for c in b]
        ks = [c.k for c in a]
        assert ks == sorted(ks)

    def test_bad_arguments(self):
        lex = make_lex(["ka"])
        with pytest.raises(ValueError):
            enumerate_candidates(lex, (1,), "infix", min_count=1)
        with pytest.raises(ValueError):
            enumerate_candidates(lex, (1,), "prefix", min_count=0)
        with pytest.raises(ValueError):
            enumerate_candidates(lex, (0,), "prefix", min_count=1)


class TestSubsetMeans:
    def exact_means(self, pop, n):
        return sorted(np.mean(c) for c in itertools.combinations(pop, n))

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_matches_enumeration_distribution(self, n):
        pop = np.array([0.0, 1.0, 10.0, 100.0, 1000.0])
        rng = np.random.default_rng(100 + n)
        draws = _subset_means(pop, n, 20000, rng)
        support = self.exact_means(pop, n)
        assert set(np.round(draws, 9)) <= set(np.round(support, 9))
        for mean in support:
            freq = np.mean(np.isclose(draws, mean))
            assert freq == pytest.approx(1.0 / len(support), abs=0.015)

    def test_full_population(self):
        pop = np.array([1.0, 2.0, 7.0])
        draws = _subset_means(pop, 3, 50, np.random.default_rng(0))
        np.testing.assert_array_equal(draws, np.full(50, pop.mean()))

    def test_unbiased_mean(self):
        rng = np.random.default_rng(5)
        pop = rng.normal(size=200)
        draws = _subset_means(pop, 37, 4000, np.random.default_rng(6))
        assert draws.mean() == pytest.approx(pop.mean(), abs=0.012)

    def test_out_of_range(self):
        pop = np.arange(4.0)
        with pytest.raises(ValueError):
            _subset_means(pop, 0, 10, np.random.default_rng(0))
        with pytest.raises(ValueError):
            _subset_means(pop, 5, 10, np.random.default_rng(0))


def stub_candidate(indices, phones=("x",)):
    idx = np.asarray(indices, dtype=np.int64)
    return AffixCandidate(phones=tuple(Phone(p) for p in phones),
                          side="prefix", word_indices=idx,
                          count=int(idx.shape[0]))


class TestPhonesthemeTest:
    def test_all_equal_pmis_tie_to_one(self):
        pmis = np.full(30, 0.7)
        cand = stub_candidate([2, 5, 9])
        p, observed = phonestheme_test(cand, pmis, n_samples=200, seed=0)
        assert p == 1.0
        assert observed == pytest.approx(0.7)

    def test_whole_population_candidate_ties_to_one(self):
        rng = np.random.default_rng(7)
        pmis = rng.normal(size=25)
        cand = stub_candidate(np.arange(25))
        p, observed = phonestheme_test(cand, pmis, n_samples=200, seed=0)
        assert p == 1.0
        assert observed == pytest.approx(pmis.mean())

    def test_singleton_max_has_inverse_population_p(self):
        rng = np.random.default_rng(8)
        pmis = rng.normal(size=10)
        cand = stub_candidate([int(np.argmax(pmis))])
        p, _ = phonestheme_test(cand, pmis, n_samples=20000, seed=1)
        assert p == pytest.approx(0.1, abs=0.01)

    def test_add_one_smoothing_floor(self):
        # 2 of 2002 words carry the signal: the chance of redrawing exactly
        # that pair is ~1/2e6 per sample, so this seed sees no tie.
        pmis = np.concatenate([np.zeros(2000), [100.0, 100.0]])
        cand = stub_candidate([2000, 2001])
        p, _ = phonestheme_test(cand, pmis, n_samples=999, seed=2)
        assert p == pytest.approx(1.0 / 1000.0)

    def test_larger_observed_never_larger_p(self):
        rng = np.random.default_rng(9)
        pmis = rng.normal(size=50)
        order = np.argsort(pmis)
        low = stub_candidate(order[:8])
        high = stub_candidate(order[-8:])
        p_low, o_low = phonestheme_test(low, pmis, n_samples=2000, seed=3,
                                        eval_phones=("z",))
        p_high, o_high = phonestheme_test(high, pmis, n_samples=2000, seed=3,
                                          eval_phones=("z",))
        assert o_high > o_low
        assert p_high < p_low

    def test_deterministic_and_seed_sensitive(self):
        rng = np.random.default_rng(10)
        pmis = rng.normal(size=60)
        cand = stub_candidate(np.arange(0, 24, 2))
        a = phonestheme_test(cand, pmis, n_samples=400, seed=4)
        b = phonestheme_test(cand, pmis, n_samples=400, seed=4)
        c = phonestheme_test(cand, pmis, n_samples=400, seed=5)
        assert a == b
        assert a[0] != c[0]

    def test_count_population_and_nan_errors(self):
        pmis = np.array([0.1, np.nan, 0.3])
        with pytest.raises(ValueError):
            phonestheme_test(stub_candidate([1]), pmis, n_samples=10, seed=0)
        with pytest.raises(ValueError):
            phonestheme_test(stub_candidate([0, 2, 0]), pmis, n_samples=10,
                             seed=0)
        bad = stub_candidate([0, 2])
        bad.count = 3
        with pytest.raises(ValueError):
            phonestheme_test(bad, pmis, n_samples=10, seed=0)

    def test_p_uniform_under_exchangeable_noise(self):
        # Fixed word set, fresh i.i.d. noise each repeat: p ~ U(0, 1).
        rng = np.random.default_rng(11)
        cand = stub_candidate(np.arange(12))
        ps = []
        for rep in range(1000):
            pmis = rng.normal(size=80)
            p, _ = phonestheme_test(cand, pmis, n_samples=499, seed=rep)
            ps.append(p)
        assert ks_uniform(ps) <= 0.05


class TestReverseForms:
    def test_involution_and_metadata(self):
        lex = make_lex(["kat", "ta", "m"], lemmas=["cat", "two", "em"])
        rev = reverse_forms(lex)
        assert [s.form for s in rev.signs] == [("t", "a", "k"), ("a", "t"),
                                               ("m",)]
        back = reverse_forms(rev)
        assert [s.form for s in back.signs] == [s.form for s in lex.signs]
        for a, b in zip(rev.signs, lex.signs):
            assert a.lemma == b.lemma
            assert a.pos == b.pos
            np.testing.assert_array_equal(a.meaning, b.meaning)
        assert rev.language == lex.language
        assert rev.classes == lex.classes
        assert rev.inventory is lex.inventory


class TestMine:
    def small_setup(self, seed=20, n=40):
        rng = np.random.default_rng(seed)
        forms = ["".join(rng.choice(list("aglmt"),
                                    size=rng.integers(2, 5)))
                 for _ in range(n)]
        lex = make_lex(forms, lemmas=[f"w{i}" for i in range(n)])
        u, c = random_tables(lex, rng)
        rev = reverse_forms(lex)
        ru, rc = random_tables(rev, rng)
        return lex, u, c, rev, ru, rc

    def test_degenerate_identical_models(self):
        lex, u, _, _, _, _ = self.small_setup()
        res = mine(lex, u, u, k_range=(1, 2), min_count=2, n_samples=200,
                   seed=0)
        assert res
        assert all(c.p_value == 1.0 for c in res)
        assert all(not c.bh_significant for c in res)
        assert all(c.avg_pmi == pytest.approx(0.0, abs=1e-12) for c in res)

    def test_suffix_equals_reversed_prefix(self):
        lex, u, c, rev, ru, rc = self.small_setup()
        both = mine(lex, u, c, k_range=(1, 2), min_count=3, n_samples=500,
                    seed=7, reversed_lex=rev, reversed_uncond=ru,
                    reversed_cond=rc)
        direct = mine(rev, ru, rc, k_range=(1, 2), min_count=3,
                      n_samples=500, seed=7)
        suffixes = {(c.k, c.phones): c for c in both if c.side == "suffix"}
        prefixes = {(c.k, c.phones): c for c in direct}
        assert suffixes
        assert set(suffixes) == {(k, tuple(reversed(ph)))
                                 for k, ph in prefixes}
        for (k, phones), s in suffixes.items():
            match = prefixes[(k, tuple(reversed(phones)))]
            assert s.count == match.count
            assert s.avg_pmi == match.avg_pmi
            assert s.p_value == match.p_value
            np.testing.assert_array_equal(s.word_indices,
                                          match.word_indices)

    def test_bh_is_joint_and_sorted(self):
        lex, u, c, rev, ru, rc = self.small_setup(seed=21)
        res = mine(lex, u, c, k_range=(1, 2), min_count=3, n_samples=300,
                   seed=2, reversed_lex=rev, reversed_uncond=ru,
                   reversed_cond=rc)
        assert any(c.side == "prefix" for c in res)
        assert any(c.side == "suffix" for c in res)
        reject, adjusted = bh_correct([c.p_value for c in res], alpha=0.05)
        np.testing.assert_allclose([c.p_adjusted for c in res], adjusted)
        assert [c.bh_significant for c in res] == list(reject)
        adj = [c.p_adjusted for c in res]
        assert adj == sorted(adj)

    def test_examples_and_counts(self):
        lex, u, c, _, _, _ = self.small_setup(seed=22, n=60)
        res = mine(lex, u, c, k_range=(1,), min_count=4, n_samples=200,
                   seed=3)
        for cand in res:
            assert cand.count >= 4
            assert 1 <= len(cand.example_lemmata) <= 5
            carriers = {lex.signs[i].lemma for i in cand.word_indices}
            assert set(cand.example_lemmata) <= carriers

    def test_deterministic(self):
        lex, u, c, _, _, _ = self.small_setup(seed=23)
        a = mine(lex, u, c, k_range=(1, 2), min_count=3, n_samples=300,
                 seed=4)
        b = mine(lex, u, c, k_range=(1, 2), min_count=3, n_samples=300,
                 seed=4)
        assert [(x.phones, x.p_value, x.avg_pmi) for x in a] == \
            [(x.phones, x.p_value, x.avg_pmi) for x in b]

    def test_reversed_lexicon_validated(self):
        lex, u, c, rev, ru, rc = self.small_setup(seed=24)
        with pytest.raises(ValueError):
            mine(lex, u, c, reversed_lex=rev)
        with pytest.raises(SignSetMismatchError):
            mine(lex, u, c, reversed_lex=lex, reversed_uncond=u,
                 reversed_cond=c)

    def test_partition_identity(self):
        lex, u, c, _, _, _ = self.small_setup(seed=25, n=50)
        res = mine(lex, u, c, k_range=(2,), min_count=1, n_samples=50,
                   seed=5)
        table = pointwise_mi_table(lex, u, c, k=2)
        eligible = table[~np.isnan(table)]
        weighted = sum(x.count * x.avg_pmi for x in res)
        total = sum(x.count for x in res)
        assert total == eligible.size
        assert weighted / total == pytest.approx(eligible.mean(), abs=1e-9)


class TestPlantedPrefixOracle:
    def test_planted_prefix_found_others_not(self):
        spec = planted_prefix_spec()
        lex, labels = generate(spec, 900, seed=5)
        uncond, cond = oracle_loss_tables(spec, lex, labels)
        res = mine(lex, uncond, cond, k_range=(1, 2), min_count=15,
                   alpha=0.05, n_samples=4000, seed=9)
        assert res
        planted = [c for c in res
                   if c.phones == (Phone("g"), Phone("l"))]
        assert len(planted) == 1
        assert planted[0].bh_significant
        assert planted[0].p_adjusted <= 0.01
        assert planted[0].avg_pmi > 0
        for cand in res:
            if cand.phones[0] != Phone("g"):
                assert not cand.bh_significant

    def test_null_pair_mixture_scores_find_nothing(self):
        spec = planted_prefix_spec()
        lex, labels = generate(spec, 400, seed=6)
        uncond, cond = oracle_loss_tables(spec, lex, labels,
                                          conditional="mixture")
        res = mine(lex, uncond, cond, k_range=(1, 2), min_count=15,
                   n_samples=500, seed=10)
        assert res
        assert all(c.p_value == 1.0 for c in res)
        assert not any(c.bh_significant for c in res)
