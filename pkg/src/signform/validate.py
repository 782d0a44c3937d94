"""Self-contained validation battery exercising the whole toolchain.

Each criterion is an oracle- or property-based check with a pinned
tolerance: gradients against finite differences, estimators against exact
synthetic enumeration, tests against brute-force enumeration, output files
against the fixed table schemas. Every check runs from fixed seeds, so a
fresh checkout either passes the battery or fails it reproducibly.

Criteria are registered by id (c01..c11) and runnable individually; the
``validate`` CLI command prints one PASS/FAIL line per criterion. c11 needs
user-supplied full-scale data and is informational: without data it is
reported as SKIP and never gates the battery.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .hyperopt import (
    Dimension,
    SearchSpace,
    expected_improvement,
    gp_fit,
    run_search,
)
from .infotheory import build_report, mi_estimate
from .lexicon import Lexicon, Phone, PhoneInventory, Sign, split_folds
from .phonesthemes import mine, reverse_forms
from .phonolm import (
    LMConfig,
    OptSettings,
    PerWordLoss,
    encode_signs,
    evaluate,
    forward,
    init_params,
    log_softmax2,
    loss_and_grads,
    micro_bits_per_phone,
)
from .pipeline import (
    RunConfig,
    make_lm_config,
    run_batch,
    run_estimate,
    train_kind,
)
from .reports import (
    write_appendix_tsv,
    write_phonesthemes_tsv,
    write_report_csv,
)
from .stats import bh_correct, exact_sign_flip_p, permutation_test, spearman_rho
from .synthbench import (
    ClusterChain,
    SyntheticSpec,
    exact_entropy,
    exact_mi,
    generate,
    independent_spec,
    oracle_word_bits,
    planted_prefix_spec,
    two_cluster_spec,
)

FAST_LM = {"hidden_size": 16, "phone_embed_size": 8, "pca_d": 3}
FAST_OPT = {"max_epochs": 12, "patience": 3, "batch_size": 64}


@dataclass(frozen=True)
class CriterionResult:
    cid: str
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    skipped: bool = False

    def line(self) -> str:
        status = "SKIP" if self.skipped else (
            "PASS" if self.passed else "FAIL")
        return f"{status} {self.cid} {self.title} [{self.seconds:.1f}s] " \
               f"{self.detail}"


def _fast_estimate(lex, seed, folds=5, permutations=1000, lm=None, **kw):
    cfg = RunConfig(language=lex.language, folds=folds, seed=seed,
                    permutations=permutations,
                    lm=dict(FAST_LM if lm is None else lm),
                    opt=dict(FAST_OPT), **kw)
    return run_estimate(cfg, lex=lex, write=False)


def _loss_tables(spec, lex, labels, conditional=True):
    """Exact per-word code lengths: mixture model vs per-cluster model."""
    uncond, cond = [], []
    for sign, c in zip(lex.signs, labels):
        phones = spec.encode_form(sign.form)
        bits = oracle_word_bits(spec, phones)
        cbits = (oracle_word_bits(spec, phones, cluster=int(c))
                 if conditional else bits.copy())
        uncond.append(PerWordLoss(key=sign.key,
                                  total_bits=float(bits.sum()),
                                  token_count=bits.size,
                                  position_bits=bits))
        cond.append(PerWordLoss(key=sign.key, total_bits=float(cbits.sum()),
                                token_count=cbits.size,
                                position_bits=cbits))
    return uncond, cond


def _noise_tables(uncond, scale=0.25, seed=0):
    """A null conditional table: per-word noise with no affix structure."""
    rng = np.random.default_rng(seed)
    cond = []
    for loss in uncond:
        eps = scale * rng.standard_normal() / loss.token_count
        bits = loss.position_bits - eps
        cond.append(PerWordLoss(key=loss.key, total_bits=float(bits.sum()),
                                token_count=bits.size, position_bits=bits))
    return cond


def _reverse_tables(lex, tables):
    """Position-reversed tables aligned with reverse_forms(lex)."""
    out = []
    for sign, loss in zip(lex.signs, tables):
        bits = np.concatenate([loss.position_bits[-2::-1],
                               loss.position_bits[-1:]])
        key = (sign.lemma, tuple(reversed(sign.form)), sign.pos)
        out.append(PerWordLoss(key=key, total_bits=float(bits.sum()),
                               token_count=bits.size, position_bits=bits))
    return out


def c01_gradient_check(hooks) -> tuple[bool, str]:
    """Analytic vs central finite-difference gradients on a tiny model."""
    start = time.time()
    alphabet = ("a", "k", "m", "s", "t")
    rng = np.random.default_rng(1)
    signs = [Sign(lemma=f"{w}{i}", form=tuple(Phone(ch) for ch in w),
                  meaning=rng.normal(size=3), pos="X")
             for i, w in enumerate(["kat", "sam", "ta"])]
    inventory = PhoneInventory.from_phones(Phone(p) for p in alphabet)
    lex = Lexicon(language="toy", inventory=inventory, signs=signs,
                  classes=("X",))
    cfg = LMConfig(layers=2, hidden_size=8, phone_embed_size=4, pca_d=3,
                   condition_on="nothing")
    params = init_params(cfg, len(lex.inventory), rng=rng)
    inputs, targets, mask = _pack(lex)

    def batch_loss():
        logits, _ = forward(params, cfg, inputs)
        logp2 = log_softmax2(logits)
        rows = (np.arange(inputs.shape[0])[:, None],
                np.arange(inputs.shape[1])[None, :], targets)
        return float(-(logp2[rows] * mask).sum())

    _, _, grads = loss_and_grads(params, cfg, inputs, targets, mask)
    fault = float(hooks.get("gradient_fault", 0.0))
    if fault:
        name0 = list(params.named_arrays())[0][0]
        grads[name0].ravel()[0] += fault

    step = 1e-4
    worst = 0.0
    for name, arr in params.named_arrays():
        flat = arr.ravel()
        gflat = grads[name].ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = batch_loss()
            flat[k] = orig - step
            down = batch_loss()
            flat[k] = orig
            numeric = (up - down) / (2 * step)
            err = abs(gflat[k] - numeric) / max(abs(gflat[k]), abs(numeric),
                                                1e-3)
            worst = max(worst, err)
    elapsed = time.time() - start
    ok = worst <= 1e-4 and elapsed < 10.0
    return ok, f"max rel err {worst:.2e} (tol 1e-4), {elapsed:.1f}s (<10s)"


def _pack(lex):
    from .phonolm import pack_batch
    encoded = encode_signs(lex.signs, lex.inventory)
    return pack_batch(encoded, lex.inventory.eos_index)


def c02_variational_bound(hooks) -> tuple[bool, str]:
    """Held-out bits/phone of a trained model never beat the true entropy."""
    spec = independent_spec()
    hstar = exact_entropy(spec).bits_per_phone
    margins = []
    for seed in range(10):
        lex, _ = generate(spec, 600, seed=200 + seed)
        fresh, _ = generate(spec, 3000, seed=900 + seed)
        folds = split_folds(lex, 4, seed)
        res = train_kind(lex, folds, 0, "uncond",
                         make_lm_config("uncond", FAST_LM),
                         OptSettings(**FAST_OPT), seed)
        losses = evaluate(res.params, res.cfg, fresh.signs, fresh.inventory)
        margins.append(micro_bits_per_phone(losses) - hstar)
    worst = min(margins)
    return worst >= -0.01, (f"min test margin over H* across 10 seeds: "
                            f"{worst:+.4f} bits (tol -0.01)")


def _single_cluster_null_spec() -> SyntheticSpec:
    """M=1 spec with fixed-length forms, so true MI is exactly zero.

    Words all have the same length: with varying lengths the conditioned
    model's trainable initial state calibrates the stop distribution a bit
    better than the unconditional model's fixed zero state, a small but
    real model-quality artifact unrelated to form-meaning association. The
    fixed length removes that confound and leaves exactly the question the
    null is asking: does the pipeline invent systematicity from meaningless
    meaning vectors?
    """
    rng = np.random.default_rng(31)
    s = 5
    chain = ClusterChain(start=rng.dirichlet(np.full(s, 2.0)),
                         trans=rng.dirichlet(np.full(s, 2.0), size=s),
                         stop=np.zeros(s))
    return SyntheticSpec(alphabet=("a", "k", "m", "s", "t"),
                         prior=np.array([1.0]), chains=(chain,),
                         centroids=np.zeros((1, 8)), noise_scale=1.0,
                         max_len=6, language="nullfix")


def c03_mi_recovery(hooks) -> tuple[bool, str]:
    """Pipeline recovers exact MI on clustered data, and zero when absent."""
    spec = two_cluster_spec()
    lex, _ = generate(spec, 5000, seed=42)
    out = _fast_estimate(lex, seed=0, folds=10, permutations=2000)
    gap = abs(out.report.mi - exact_mi(spec))
    part_a = gap <= 0.05

    null_spec = _single_cluster_null_spec()
    hits = 0
    for seed in range(20):
        nlex, _ = generate(null_spec, 4000, seed=1000 + seed)
        nout = _fast_estimate(nlex, seed=seed, folds=4, permutations=2000,
                              lm=dict(FAST_LM, dropout=0.2))
        if abs(nout.report.mi) <= 0.03 and nout.report.p_value > 0.05:
            hits += 1
    part_b = hits >= 18
    return part_a and part_b, (
        f"two-cluster |est-exact|={gap:.4f} (tol 0.05); "
        f"null spec clean in {hits}/20 seeds (need 18)")


def c04_conditioning_direction(hooks) -> tuple[bool, str]:
    """Conditioning lowers mean test entropy wherever true MI is material."""
    details = []
    ok = True
    for name, maker in (("two_cluster", two_cluster_spec),
                        ("planted_prefix", planted_prefix_spec)):
        spec = maker()
        true_mi = exact_mi(spec)
        if true_mi <= 0.05:
            continue
        h_u, h_c = [], []
        for seed in range(3):
            lex, _ = generate(spec, 1500, seed=300 + seed)
            out = _fast_estimate(lex, seed=seed, folds=5)
            h_u.append(out.report.h_w.bits_per_phone)
            h_c.append(out.report.h_w_given_v.bits_per_phone)
        drop = float(np.mean(h_u) - np.mean(h_c))
        ok = ok and drop >= 0.0
        details.append(f"{name}: mean drop {drop:+.3f} bits")
    return ok, "; ".join(details)


def c05_permutation_exactness(hooks) -> tuple[bool, str]:
    """Monte Carlo p matches 2^N enumeration; null p-values are uniform."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for n in (5, 8, 12):
        deltas = rng.standard_normal(n) * 0.5 + 0.2
        mc = permutation_test(deltas, n_perm=100_000, seed=1).p_value
        exact = exact_sign_flip_p(deltas)
        worst = max(worst, abs(mc - exact))
    part_a = worst <= 0.01

    null_rng = np.random.default_rng(2)
    ps = [permutation_test(null_rng.standard_normal(20), n_perm=999,
                           seed=10_000 + r).p_value for r in range(200)]
    ks_p = float(sps.kstest(ps, "uniform").pvalue)
    part_b = ks_p > 0.05
    return part_a and part_b, (f"max |MC-exact| {worst:.4f} (tol 0.01); "
                               f"null uniformity KS p={ks_p:.3f} (>0.05)")


def c06_bh_and_spearman(hooks) -> tuple[bool, str]:
    """Hand-checked step-up correction and rank correlation, no tolerance."""
    reject, _ = bh_correct([0.01, 0.02, 0.03, 0.04, 0.05], alpha=0.05)
    part_a = list(reject) == [True] * 5
    rho = spearman_rho([(1, 2), (2, 3), (3, 1)], n_perm=100, seed=0).rho
    part_b = rho == -0.5
    return part_a and part_b, (f"step-up rejections {int(sum(reject))}/5; "
                               f"3-pair rho {rho}")


def c07_phonestheme_mining(hooks) -> tuple[bool, str]:
    """Planted affix found; null affixes stay quiet; suffix identity exact."""
    spec = planted_prefix_spec()
    lex, labels = generate(spec, 2500, seed=77)
    uncond, cond = _loss_tables(spec, lex, labels)
    rev = reverse_forms(lex)
    rev_u, rev_c = _reverse_tables(lex, uncond), _reverse_tables(lex, cond)
    found = mine(lex, uncond, cond, k_range=(1, 2, 3), min_count=10,
                 n_samples=20_000, seed=7, reversed_lex=rev,
                 reversed_uncond=rev_u, reversed_cond=rev_c)
    planted = next(c for c in found
                   if c.side == "prefix" and c.phones == ("g", "l"))
    part_a = planted.bh_significant and planted.p_adjusted <= 0.01

    null_cond = _noise_tables(uncond, seed=11)
    null_found = mine(lex, uncond, null_cond, k_range=(1, 2, 3),
                      min_count=10, n_samples=2000, seed=8,
                      reversed_lex=rev, reversed_uncond=rev_u,
                      reversed_cond=_reverse_tables(lex, null_cond))
    n_null = len(null_found)
    fp_rate = sum(c.bh_significant for c in null_found) / n_null
    part_b = n_null >= 50 and fp_rate <= 0.05 + 0.05

    forward_run = mine(lex, uncond, cond, k_range=(1, 2), min_count=10,
                       n_samples=2000, seed=9, reversed_lex=rev,
                       reversed_uncond=rev_u, reversed_cond=rev_c)
    mirrored = mine(rev, rev_u, rev_c, k_range=(1, 2), min_count=10,
                    n_samples=2000, seed=9)
    suffixes = {c.phones: c for c in forward_run if c.side == "suffix"}
    prefixes = {tuple(reversed(c.phones)): c for c in mirrored}
    part_c = set(suffixes) == set(prefixes) and all(
        suffixes[k].p_value == prefixes[k].p_value
        and suffixes[k].count == prefixes[k].count for k in suffixes)
    return part_a and part_b and part_c, (
        f"planted adj p {planted.p_adjusted:.4f} (<=0.01); "
        f"FP rate {fp_rate:.3f} over {n_null} null affixes (tol 0.10); "
        f"suffix/reversed-prefix identity {'exact' if part_c else 'BROKEN'}")


def c08_hyperopt_quadratic(hooks) -> tuple[bool, str]:
    """Search lands near an analytic optimum; EI closed form spot-checked."""
    space = SearchSpace(dimensions=(
        Dimension("x", "continuous", 0.0, 1.0),))
    hits = 0
    for seed in range(10):
        res = run_search(lambda nat: (nat["x"] - 0.37) ** 2, space,
                         budget=20, seed=seed)
        if abs(res.best.native["x"] - 0.37) <= 0.05:
            hits += 1
    part_a = hits >= 9

    prior = gp_fit([], length_scales=np.array([0.5]), signal_var=1.0,
                   noise_var=0.0, fit=False)
    ei = float(expected_improvement(prior, 0.0,
                                    np.array([[0.5]]))[0])
    phi0 = 1.0 / np.sqrt(2.0 * np.pi)
    part_b = abs(ei - phi0) <= 1e-4
    return part_a and part_b, (f"{hits}/10 seeds within 0.05 (need 9); "
                               f"EI at z=0: {ei:.6f} vs {phi0:.6f}")


def c09_table_schemas(hooks) -> tuple[bool, str]:
    """Emitted file headers match the published table layouts."""
    report = _toy_report()
    tmp = tempfile.mkdtemp(prefix="signform_schema_")
    try:
        csv_path = os.path.join(tmp, "report.csv")
        write_report_csv(csv_path, [report])
        with open(csv_path) as fh:
            report_header = tuple(fh.readline().strip().split(","))
        appendix_path = os.path.join(tmp, "appendix.tsv")
        write_appendix_tsv(appendix_path, [])
        with open(appendix_path) as fh:
            appendix_header = tuple(fh.readline().strip().split("\t"))
        ph_path = os.path.join(tmp, "phonesthemes.tsv")
        write_phonesthemes_tsv(ph_path, [])
        with open(ph_path) as fh:
            ph_header = tuple(fh.readline().strip().split("\t"))
    finally:
        shutil.rmtree(tmp)
    ok_report = report_header == (
        "language", "h_w", "mi_w_v", "u_w_v", "cohens_d",
        "mi_w_v_given_pos", "u_w_v_given_pos", "cohens_d_given_pos")
    ok_appendix = appendix_header == ("language", "h_w", "u_w_v",
                                      "u_w_v_given_pos")
    ok_ph = ph_header == ("phonestheme", "count", "examples", "p_value")
    return ok_report and ok_appendix and ok_ph, (
        f"report {'ok' if ok_report else report_header}; "
        f"appendix {'ok' if ok_appendix else appendix_header}; "
        f"phonesthemes {'ok' if ok_ph else ph_header}")


def _toy_report():
    keys = [(f"w{i}", (), "X") for i in range(4)]

    def loss(key, bits):
        bits = np.asarray(bits, dtype=np.float64)
        return PerWordLoss(key=key, total_bits=float(bits.sum()),
                           token_count=bits.size, position_bits=bits)

    uncond = [loss(k, [2.0, 2.0]) for k in keys]
    cond = [loss(k, b) for k, b in zip(
        keys, [[1.0, 1.0], [1.2, 1.0], [0.8, 1.0], [1.1, 0.9]])]
    return build_report("toy", mi_estimate(uncond, cond), p_value=0.01)


def c10_determinism(hooks) -> tuple[bool, str]:
    """Identical config twice gives byte-identical CSV and JSON reports."""
    spec = two_cluster_spec()
    lex, _ = generate(spec, 300, seed=11)
    tmp = tempfile.mkdtemp(prefix="signform_determinism_")
    try:
        cfg = RunConfig(language="tc", out_dir=tmp, folds=5, seed=9,
                        permutations=500, lm=dict(FAST_LM),
                        opt=dict(FAST_OPT))
        run_estimate(cfg, lex=lex)
        with open(os.path.join(tmp, "report.csv"), "rb") as fh:
            csv_first = fh.read()
        with open(os.path.join(tmp, "report.json"), "rb") as fh:
            json_first = fh.read()
        run_estimate(cfg, lex=lex)
        with open(os.path.join(tmp, "report.csv"), "rb") as fh:
            csv_same = fh.read() == csv_first
        with open(os.path.join(tmp, "report.json"), "rb") as fh:
            json_same = fh.read() == json_first
    finally:
        shutil.rmtree(tmp)
    return csv_same and json_same, (
        f"csv identical: {csv_same}; json identical: {json_same}")


def c11_full_scale(hooks) -> tuple[bool, str]:
    """Informational: batch over user-supplied data, U in the usual range."""
    config_path = hooks.get("full_scale_config") or os.environ.get(
        "SIGNFORM_FULLSCALE_CONFIG")
    if not config_path:
        raise _Skip("no full-scale dataset configured "
                    "(set SIGNFORM_FULLSCALE_CONFIG); informational only")
    with open(config_path) as fh:
        doc = json.load(fh)
    configs = [RunConfig.from_dict(d) for d in doc["languages"]]
    out_dir = doc.get("out_dir") or tempfile.mkdtemp(
        prefix="signform_fullscale_")
    batch = run_batch(configs, out_dir, threads=int(doc.get("threads", 1)))
    us = [r.uncertainty for r in batch.reports]
    inside = sum(1 for u in us if -0.05 <= u <= 0.12)
    frac = inside / len(us)
    return True, (f"{inside}/{len(us)} languages with U in [-0.05, 0.12] "
                  f"({frac:.0%}); informational only")


class _Skip(Exception):
    pass


CRITERIA = (
    ("c01", "gradient check vs finite differences", c01_gradient_check),
    ("c02", "trained entropy upper-bounds the true entropy",
     c02_variational_bound),
    ("c03", "MI recovery on clustered and independent data",
     c03_mi_recovery),
    ("c04", "conditioning lowers entropy when MI is present",
     c04_conditioning_direction),
    ("c05", "permutation p vs exhaustive enumeration and uniformity",
     c05_permutation_exactness),
    ("c06", "step-up correction and rank correlation hand examples",
     c06_bh_and_spearman),
    ("c07", "planted phonestheme found, nulls quiet, suffix identity",
     c07_phonestheme_mining),
    ("c08", "hyperparameter search optimum and EI closed form",
     c08_hyperopt_quadratic),
    ("c09", "output file schemas", c09_table_schemas),
    ("c10", "byte-identical reruns", c10_determinism),
    ("c11", "full-scale batch on user data (informational)", c11_full_scale),
)

CRITERION_IDS = tuple(cid for cid, _, _ in CRITERIA)


def run_criterion(cid: str, **hooks) -> CriterionResult:
    for known, title, fn in CRITERIA:
        if known == cid:
            start = time.time()
            skipped = False
            try:
                passed, detail = fn(hooks)
            except _Skip as skip:
                passed, detail, skipped = True, str(skip), True
            except Exception as exc:
                passed = False
                detail = f"crashed: {type(exc).__name__}: {exc}"
            return CriterionResult(cid=cid, title=title, passed=passed,
                                   detail=detail,
                                   seconds=time.time() - start,
                                   skipped=skipped)
    raise ValueError(f"unknown criterion {cid!r}; have {CRITERION_IDS}")


def run_battery(ids=None, progress=None, **hooks) -> list[CriterionResult]:
    results = []
    for cid in ids or CRITERION_IDS:
        result = run_criterion(cid, **hooks)
        results.append(result)
        if progress is not None:
            progress(result.line())
    return results


def battery_passed(results) -> bool:
    return all(r.passed for r in results if not r.skipped)
