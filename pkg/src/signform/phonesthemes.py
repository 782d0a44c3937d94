"""Mining affixes that carry meaning: pointwise form-meaning MI per affix.

A word's k-prefix pointwise MI is the average per-phone saving of the
meaning-conditioned model over the unconditional one across the first k
positions. An affix is a phonestheme candidate when the words carrying it
average a higher pointwise MI than random same-sized word sets; the null
distribution comes from Monte Carlo draws without replacement from all
eligible words, and candidates are corrected jointly with Benjamini-
Hochberg.

Suffixes are handled by the same machinery on reversed word forms scored
by a model pair trained on reversed forms: the last k positions of a word
are the first k of its reversal, where prediction is causal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SignSetMismatchError
from .lexicon import Lexicon, Phone, Sign
from .seeding import derive_rng
from .stats import bh_correct

SIDES = ("prefix", "suffix")


@dataclass
class AffixCandidate:
    """One word-initial or word-final phone sequence and its evidence."""

    phones: tuple[Phone, ...]
    side: str
    word_indices: np.ndarray
    count: int
    avg_pmi: float | None = None
    p_value: float | None = None
    p_adjusted: float | None = None
    bh_significant: bool = False
    example_lemmata: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return len(self.phones)

    def affix_string(self) -> str:
        joined = "".join(self.phones)
        return joined + "-" if self.side == "prefix" else "-" + joined


def pointwise_affix_mi(uncond_bits, cond_bits, k: int,
                       side: str = "prefix") -> float:
    """Per-word pointwise MI of the first k predicted positions, bits/phone.

    Both bit vectors must come from the evaluation orientation that makes
    the affix word-initial: forward models for prefixes, reversed-form
    models for suffixes (the arithmetic is identical, the caller guarantees
    the orientation). k may extend to |form|+1, where the value equals the
    word's whole per-phone delta including the end marker.
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    ub = np.asarray(uncond_bits, dtype=np.float64)
    cb = np.asarray(cond_bits, dtype=np.float64)
    if ub.shape != cb.shape:
        raise SignSetMismatchError("bit vectors differ in length")
    if not (1 <= k <= ub.shape[0]):
        raise ValueError(f"k={k} out of range for {ub.shape[0]} positions")
    return float((ub[:k] - cb[:k]).mean())


def _check_alignment(lex: Lexicon, losses, what: str):
    if len(losses) != len(lex.signs):
        raise SignSetMismatchError(f"{what}: {len(losses)} losses for "
                                   f"{len(lex.signs)} signs")
    for sign, pl in zip(lex.signs, losses):
        if pl.key != sign.key:
            raise SignSetMismatchError(
                f"{what}: loss table out of order at {sign.key!r}")


def pointwise_mi_table(lex: Lexicon, uncond, cond, k: int) -> np.ndarray:
    """Per-sign k-prefix pointwise MI; NaN for words shorter than k."""
    _check_alignment(lex, uncond, cond)
    out = np.full(len(lex.signs), np.nan)
    for i, (sign, u, c) in enumerate(zip(lex.signs, uncond, cond)):
        if len(sign.form) >= k:
            out[i] = pointwise_affix_mi(u.position_bits, c.position_bits, k)
    return out


def enumerate_candidates(lex: Lexicon, k_range, side: str,
                         min_count: int = 20) -> list[AffixCandidate]:
    """All distinct k-initial (or k-final) sequences held by >= min_count
    signs, for each k in k_range. Words shorter than k never contribute."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    out = []
    for k in sorted(set(int(k) for k in k_range)):
        if k < 1:
            raise ValueError("k must be >= 1")
        groups: dict[tuple, list[int]] = {}
        for i, sign in enumerate(lex.signs):
            if len(sign.form) < k:
                continue
            affix = sign.form[:k] if side == "prefix" else sign.form[-k:]
            groups.setdefault(affix, []).append(i)
        for affix in sorted(groups):
            idx = groups[affix]
            if len(idx) >= min_count:
                out.append(AffixCandidate(
                    phones=tuple(affix), side=side,
                    word_indices=np.array(idx, dtype=np.int64),
                    count=len(idx)))
    return out


def _subset_means(pop: np.ndarray, n: int, n_samples: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Means of uniform size-n subsets of pop, drawn without replacement."""
    big = pop.size
    if not (1 <= n <= big):
        raise ValueError(f"subset size {n} out of range for {big} words")
    if n == big:
        return np.full(n_samples, float(pop.mean()))
    complement = n > big // 2
    m = big - n if complement else n
    total = float(pop.sum())
    out = np.empty(n_samples)
    chunk = max(1, (1 << 21) // big)
    base = np.arange(big, dtype=np.int64)
    done = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        idx = np.tile(base, (take, 1))
        rows = np.arange(take)
        # Partial Fisher-Yates: after m steps the first m columns of each
        # row hold a uniform m-subset.
        for j in range(m):
            r = rng.integers(j, big, size=take)
            vj = idx[rows, j].copy()
            vr = idx[rows, r].copy()
            idx[rows, j] = vr
            idx[rows, r] = vj
        sums = pop[idx[:, :m]].sum(axis=1)
        out[done:done + take] = ((total - sums) / n if complement
                                 else sums / n)
        done += take
    return out


def phonestheme_test(candidate: AffixCandidate, pmis_by_sign: np.ndarray,
                     n_samples: int = 100_000, seed: int = 0,
                     eval_phones: tuple | None = None):
    """Monte Carlo tail test of one candidate against random word sets.

    pmis_by_sign holds each sign's pointwise MI at the candidate's k (NaN
    for ineligible words). Draws n_samples sets of candidate.count words
    (without replacement, from eligible words only) and counts sample means
    at least as large as the observed mean, ties extreme, add-one smoothed.
    Returns (p_value, observed_mean). The random stream is keyed by the
    affix in evaluation orientation so suffix tests match the equivalent
    reversed-prefix tests exactly.
    """
    if candidate.count != int(candidate.word_indices.shape[0]):
        raise ValueError("candidate count does not match its word set")
    observed_vals = pmis_by_sign[candidate.word_indices]
    if np.any(np.isnan(observed_vals)):
        raise ValueError("candidate includes words without a PMI value")
    pop = pmis_by_sign[~np.isnan(pmis_by_sign)]
    n = candidate.count
    if n > pop.size:
        raise ValueError(f"candidate count {n} exceeds population {pop.size}")
    observed = float(observed_vals.mean())
    if n == pop.size or pop.min() == pop.max():
        # Every same-sized draw has the same mean: all samples tie.
        return 1.0, observed
    tag = "|".join(eval_phones if eval_phones is not None
                   else candidate.phones)
    rng = derive_rng(seed, "phonesthemes", candidate.k, tag)
    means = _subset_means(pop, n, n_samples, rng)
    extreme = int(np.count_nonzero(means >= observed))
    return (extreme + 1) / (n_samples + 1), observed


def reverse_forms(lex: Lexicon) -> Lexicon:
    """The same lexicon with every phone sequence reversed (involutive)."""
    signs = [Sign(lemma=s.lemma, form=tuple(reversed(s.form)),
                  meaning=s.meaning, pos=s.pos, concept_id=s.concept_id)
             for s in lex.signs]
    return Lexicon(language=lex.language, inventory=lex.inventory,
                   signs=signs, classes=lex.classes, stats=lex.stats)


def mine(lex: Lexicon, uncond, cond, *, k_range=(1, 2, 3), min_count: int = 20,
         alpha: float = 0.05, n_samples: int = 100_000, seed: int = 0,
         reversed_lex: Lexicon | None = None, reversed_uncond=None,
         reversed_cond=None) -> list[AffixCandidate]:
    """Full mining pass: enumerate, test, BH-correct, rank.

    uncond and cond are loss tables aligned with lex.signs. When the
    reversed trio is supplied, suffixes are mined as prefixes of the
    reversed forms and reported in surface orientation. All candidates from
    both sides share one BH correction; the result is sorted by adjusted
    then raw p-value, with up to five example lemmata per candidate (the
    earliest signs carrying the affix).
    """
    jobs = [(lex, uncond, cond, "prefix")]
    if reversed_lex is not None:
        if reversed_uncond is None or reversed_cond is None:
            raise ValueError("suffix mining needs reversed loss tables")
        if len(reversed_lex.signs) != len(lex.signs) or any(
                r.lemma != s.lemma or r.form != tuple(reversed(s.form))
                for r, s in zip(reversed_lex.signs, lex.signs)):
            raise SignSetMismatchError(
                "reversed_lex is not the sign-for-sign reversal of lex")
        jobs.append((reversed_lex, reversed_uncond, reversed_cond, "suffix"))

    candidates: list[AffixCandidate] = []
    for job_lex, job_u, job_c, side in jobs:
        stubs = enumerate_candidates(job_lex, k_range, "prefix", min_count)
        tables = {k: pointwise_mi_table(job_lex, job_u, job_c, k)
                  for k in sorted(set(int(k) for k in k_range))}
        for cand in stubs:
            eval_phones = cand.phones
            p, observed = phonestheme_test(cand, tables[cand.k],
                                           n_samples=n_samples, seed=seed,
                                           eval_phones=eval_phones)
            surface = (eval_phones if side == "prefix"
                       else tuple(reversed(eval_phones)))
            lemmata = tuple(job_lex.signs[i].lemma
                            for i in cand.word_indices[:5])
            candidates.append(AffixCandidate(
                phones=surface, side=side,
                word_indices=cand.word_indices, count=cand.count,
                avg_pmi=observed, p_value=p,
                example_lemmata=lemmata))

    if candidates:
        reject, adjusted = bh_correct([c.p_value for c in candidates],
                                      alpha=alpha)
        for cand, r, a in zip(candidates, reject, adjusted):
            cand.p_adjusted = float(a)
            cand.bh_significant = bool(r)
        candidates.sort(key=lambda c: (c.p_adjusted, c.p_value, c.side,
                                       c.k, c.phones))
    return candidates
