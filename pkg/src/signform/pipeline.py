"""End-to-end orchestration: config, per-language estimate, batch, mining.

One run estimates a language's form entropy and form-meaning MI: parse the
lexicon, attach embeddings, split folds, optionally search hyperparameters,
train one model per enabled kind, score the held-out test fold, difference
the cross-entropies, and attach sign-flip permutation p-values. Batch mode
repeats this per language in a bounded worker pool with per-language crash
isolation, then corrects significance across languages and aggregates.
"""

from __future__ import annotations

import dataclasses
import json
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SignformError
from .hyperopt import Dimension, SearchSpace, run_search
from .infotheory import (
    MIReport,
    build_report,
    conditional_mi,
    mi_estimate,
)
from .lexicon import (
    Lexicon,
    attach_meanings,
    load_embeddings,
    parse_lexicon,
    split_folds,
)
from .phonesthemes import mine, reverse_forms
from .phonolm import (
    LMConfig,
    OptSettings,
    evaluate,
    load_model,
    save_model,
    train_on_indices,
)
from .reports import (
    appendix_row,
    report_json_payload,
    write_appendix_tsv,
    write_density_csv,
    write_density_svg,
    write_json,
    write_phonestheme_detail_tsv,
    write_phonesthemes_tsv,
    write_report_csv,
)
from .seeding import derive_rng
from .semspace import pca_fit, pca_transform
from .stats import bh_correct, kde, permutation_test
from .synthbench import (
    exact_entropy,
    exact_mi,
    generate,
    independent_spec,
    planted_prefix_spec,
    two_cluster_spec,
)

MODEL_KINDS = ("uncond", "meaning", "class", "meaning_and_class")
KIND_CONDITION = {
    "uncond": "nothing",
    "meaning": "meaning",
    "class": "class",
    "meaning_and_class": "meaning_and_class",
}
SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    """Everything one estimate run needs, loadable from a JSON document."""

    language: str
    lexicon_path: str | None = None
    embeddings_path: str | None = None
    out_dir: str = "."
    columns: dict | None = None
    pretokenized: bool = False
    strip_marks: bool = True
    folds: int = 10
    rotation: int = 0
    seed: int = 0
    threads: int = 1
    model_kinds: tuple = ("uncond", "meaning")
    permutations: int = 100_000
    hyperopt_budget: int = 0
    lm: dict = field(default_factory=dict)
    opt: dict = field(default_factory=dict)
    pca_train_only: bool = True
    phonesthemes: dict = field(default_factory=lambda: {
        "k_range": [1, 2, 3], "min_count": 20, "alpha": 0.05,
        "n_samples": 100_000})
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.model_kinds = tuple(self.model_kinds)
        unknown = set(self.model_kinds) - set(MODEL_KINDS)
        if unknown:
            raise ValueError(f"unknown model kinds: {sorted(unknown)}")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"config schema {self.schema_version} not supported")
        if not ("uncond" in self.model_kinds
                and "meaning" in self.model_kinds):
            raise ValueError("MI needs both the uncond and meaning models")
        has_class = "class" in self.model_kinds
        has_mac = "meaning_and_class" in self.model_kinds
        if has_class != has_mac:
            raise ValueError("class-controlled MI needs both the class and "
                             "meaning_and_class models")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")

    @property
    def with_pos_control(self) -> bool:
        return "class" in self.model_kinds

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model_kinds"] = list(self.model_kinds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def validate_paths(self):
        if self.lexicon_path is None:
            raise ValueError("config needs a lexicon_path")
        if not os.path.exists(self.lexicon_path):
            raise FileNotFoundError(self.lexicon_path)
        if self.embeddings_path is None:
            raise ValueError("meaning models need an embeddings_path")
        if not os.path.exists(self.embeddings_path):
            raise FileNotFoundError(self.embeddings_path)


def load_config(path, **overrides) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d)


def resolve_lexicon(config: RunConfig) -> Lexicon:
    """Parse the lexicon file and attach embedding vectors to its signs."""
    config.validate_paths()
    with open(config.lexicon_path, "r", encoding="utf-8") as fh:
        lex = parse_lexicon(fh, config.language, columns=config.columns,
                            pretokenized=config.pretokenized,
                            strip_marks=config.strip_marks)
    with open(config.embeddings_path, "r", encoding="utf-8") as fh:
        vectors, _missing = load_embeddings(fh, [s.lemma for s in lex.signs])
    return attach_meanings(lex, vectors)


def make_lm_config(kind: str, base: dict) -> LMConfig:
    values = dict(base)
    values["condition_on"] = KIND_CONDITION[kind]
    if (kind == "meaning_and_class"
            and values.get("hidden_size", 32) % 2 != 0):
        values["hidden_size"] = values["hidden_size"] + 1
    return LMConfig(**values)


def seed_for(config_seed: int, *tags) -> int:
    return int(derive_rng(config_seed, *tags).integers(2 ** 31))


@dataclass
class KindResult:
    kind: str
    cfg: LMConfig
    params: object
    pca: object | None
    val_bits: float
    test_losses: list
    all_losses: list | None = None


def _meanings_matrix(lex: Lexicon) -> np.ndarray:
    return np.array([s.meaning for s in lex.signs])


def fit_meanings(lex: Lexicon, d: int, train_idx=None,
                 train_only: bool = True):
    """PCA of the meaning space, fit on training rows only by default."""
    meanings = _meanings_matrix(lex)
    basis = meanings[train_idx] if (train_only and train_idx is not None) \
        else meanings
    pca = pca_fit(basis, d)
    return pca, pca_transform(pca, meanings)


def train_kind(lex: Lexicon, folds, rotation: int, kind: str,
               lm_cfg: LMConfig, opt: OptSettings, seed: int,
               pca_train_only: bool = True,
               score_all: bool = False) -> KindResult:
    """Train one model kind and score the test fold (optionally all signs)."""
    train_idx, val_idx, test_idx = folds.roles(rotation)
    pca = None
    v_all = None
    if lm_cfg.uses_meaning:
        pca, v_all = fit_meanings(lex, lm_cfg.pca_d, train_idx,
                                  pca_train_only)
    result = train_on_indices(lex, train_idx, val_idx, lm_cfg, opt,
                              seed_for(seed, "train", kind), v=v_all)
    test_signs = [lex.signs[i] for i in test_idx]
    test_v = v_all[test_idx] if v_all is not None else None
    test_losses = evaluate(result.params, lm_cfg, test_signs,
                           lex.inventory, v=test_v)
    all_losses = None
    if score_all:
        all_losses = evaluate(result.params, lm_cfg, lex.signs,
                              lex.inventory, v=v_all)
    return KindResult(kind=kind, cfg=lm_cfg, params=result.params, pca=pca,
                      val_bits=result.best_val, test_losses=test_losses,
                      all_losses=all_losses)


def _search_space(kind: str, meaning_dim: int) -> SearchSpace:
    dims = [Dimension("layers", "integer", 1, 3),
            Dimension("hidden_size", "integer", 32, 512),
            Dimension("dropout", "continuous", 0.0, 0.5)]
    upper = min(300, meaning_dim)
    if KIND_CONDITION[kind] in ("meaning", "meaning_and_class") and upper > 2:
        dims.append(Dimension("pca_d", "integer", 2, upper))
    return SearchSpace(dimensions=tuple(dims))


def search_lm(lex: Lexicon, folds, rotation: int, kind: str,
              config: RunConfig):
    """Hyperparameter search for one kind; returns (best lm dict, trials)."""
    train_idx, val_idx, _ = folds.roles(rotation)
    meaning_dim = lex.signs[0].meaning.shape[0]
    space = _search_space(kind, meaning_dim)
    opt = OptSettings(**config.opt)

    def objective(native: dict) -> float:
        base = dict(config.lm)
        base.update(native)
        lm_cfg = make_lm_config(kind, base)
        v_all = None
        if lm_cfg.uses_meaning:
            _, v_all = fit_meanings(lex, lm_cfg.pca_d, train_idx,
                                    config.pca_train_only)
        result = train_on_indices(
            lex, train_idx, val_idx, lm_cfg, opt,
            seed_for(config.seed, "search", kind), v=v_all)
        return result.best_val

    result = run_search(objective, space, budget=config.hyperopt_budget,
                        seed=seed_for(config.seed, "hyperopt", kind))
    best = dict(config.lm)
    best.update(result.best.native)
    return best, result.trials


@dataclass
class EstimateOutput:
    report: MIReport
    kind_results: dict
    out_dir: str
    files: dict


def run_estimate(config: RunConfig, lex: Lexicon | None = None,
                 write: bool = True) -> EstimateOutput:
    """The full single-language pipeline; returns the report and artifacts."""
    if lex is None:
        lex = resolve_lexicon(config)
    folds = split_folds(lex, config.folds, seed_for(config.seed, "folds"))
    opt = OptSettings(**config.opt)

    search_trials = {}
    kind_lm: dict[str, dict] = {}
    for kind in config.model_kinds:
        if config.hyperopt_budget > 0:
            kind_lm[kind], search_trials[kind] = search_lm(
                lex, folds, config.rotation, kind, config)
        else:
            kind_lm[kind] = dict(config.lm)

    results = {}
    for kind in config.model_kinds:
        lm_cfg = make_lm_config(kind, kind_lm[kind])
        results[kind] = train_kind(lex, folds, config.rotation, kind,
                                   lm_cfg, opt, config.seed,
                                   config.pca_train_only)

    plain = mi_estimate(results["uncond"].test_losses,
                        results["meaning"].test_losses)
    perm = permutation_test(plain.deltas, n_perm=config.permutations,
                            seed=seed_for(config.seed, "perm", "plain"))
    classed = None
    perm_pos = None
    if config.with_pos_control:
        classed = conditional_mi(results["class"].test_losses,
                                 results["meaning_and_class"].test_losses)
        perm_pos = permutation_test(
            classed.deltas, n_perm=config.permutations,
            seed=seed_for(config.seed, "perm", "pos"))
    report = build_report(
        config.language, plain, classed, p_value=perm.p_value,
        p_value_given_pos=perm_pos.p_value if perm_pos else None)

    files = {}
    if write:
        os.makedirs(config.out_dir, exist_ok=True)
        models_dir = os.path.join(config.out_dir, "models")
        os.makedirs(models_dir, exist_ok=True)
        csv_path = os.path.join(config.out_dir, "report.csv")
        write_report_csv(csv_path, [report])
        json_path = os.path.join(config.out_dir, "report.json")
        write_json(json_path, report_json_payload(
            report, config=config.to_dict(),
            seeds={"master": config.seed,
                   "folds": seed_for(config.seed, "folds"),
                   "permutation": seed_for(config.seed, "perm", "plain")}))
        files = {"report_csv": csv_path, "report_json": json_path}
        for kind, res in results.items():
            path = os.path.join(models_dir, f"{kind}.archive")
            save_model(path, res.cfg, lex.inventory, res.params,
                       pca=res.pca,
                       extra={"kind": kind, "language": config.language,
                              "val_bits": res.val_bits})
            files[f"model_{kind}"] = path
        if search_trials:
            log_path = os.path.join(config.out_dir, "search.jsonl")
            with open(log_path, "w", encoding="utf-8") as fh:
                for kind, trials in search_trials.items():
                    for t in trials:
                        rec = json.loads(t.to_json())
                        rec["kind"] = kind
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
            files["search_log"] = log_path
    return EstimateOutput(report=report, kind_results=results,
                          out_dir=config.out_dir, files=files)


@dataclass
class BatchOutput:
    reports: list
    significant: dict
    failures: dict
    aggregate: dict
    files: dict


def _error_record(exc: Exception) -> dict:
    return {"error": type(exc).__name__, "message": str(exc),
            "trace": traceback.format_exc()}


def run_batch(configs, out_dir: str, threads: int = 1) -> BatchOutput:
    """Estimate every language, then correct and aggregate across them.

    Each language writes into out_dir/<language>/; a failure there is
    captured into that directory's error.json and the batch carries on.
    """
    if not configs:
        raise ValueError("batch needs at least one language config")
    os.makedirs(out_dir, exist_ok=True)

    def job(config: RunConfig):
        config = dataclasses.replace(
            config, out_dir=os.path.join(out_dir, config.language))
        try:
            return config.language, run_estimate(config), None
        except Exception as exc:
            os.makedirs(config.out_dir, exist_ok=True)
            record = _error_record(exc)
            write_json(os.path.join(config.out_dir, "error.json"), record)
            return config.language, None, record

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, configs))
    else:
        outcomes = [job(c) for c in configs]

    reports = []
    failures = {}
    for language, output, err in outcomes:
        if err is None:
            reports.append(output.report)
        else:
            failures[language] = err
    if not reports:
        raise SignformError("every language in the batch failed")

    reject, adjusted = bh_correct([r.p_value for r in reports])
    pos_reports = [r for r in reports if r.p_value_given_pos is not None]
    pos_flags = {}
    if pos_reports:
        pos_reject, pos_adj = bh_correct(
            [r.p_value_given_pos for r in pos_reports])
        pos_flags = {r.language: (bool(f), float(a)) for r, f, a in
                     zip(pos_reports, pos_reject, pos_adj)}

    significant = {}
    rows = []
    for rep, flag, adj in zip(reports, reject, adjusted):
        pos_flag, pos_adj_p = pos_flags.get(rep.language, (False, None))
        significant[rep.language] = {
            "significant": bool(flag), "p_adjusted": float(adj),
            "significant_pos": pos_flag, "p_adjusted_pos": pos_adj_p}
        rows.append(appendix_row(rep, bool(flag), pos_flag))

    us = [r.uncertainty for r in reports]
    mis = [r.mi for r in reports]
    aggregate = {
        "n_languages": len(reports),
        "n_failed": len(failures),
        "u_mean": float(np.mean(us)),
        "mi_mean": float(np.mean(mis)),
        "cohens_d_mean": float(np.mean([r.cohens_d for r in reports])),
        "n_significant": int(np.count_nonzero(reject)),
    }
    if pos_reports:
        aggregate.update({
            "u_pos_mean": float(np.mean(
                [r.uncertainty_given_pos for r in pos_reports])),
            "cohens_d_pos_mean": float(np.mean(
                [r.cohens_d_given_pos for r in pos_reports])),
            "n_significant_pos": int(sum(
                1 for v in pos_flags.values() if v[0])),
        })

    files = {}
    appendix = os.path.join(out_dir, "appendix.tsv")
    write_appendix_tsv(appendix, rows)
    files["appendix"] = appendix
    csv_path = os.path.join(out_dir, "report.csv")
    write_report_csv(csv_path, reports)
    files["report_csv"] = csv_path
    agg_path = os.path.join(out_dir, "aggregate.json")
    write_json(agg_path, {"aggregate": aggregate,
                          "significance": significant,
                          "failures": failures})
    files["aggregate"] = agg_path
    if len(reports) >= 2:
        curves = {}
        if float(np.std(mis)) > 0:
            curves["MI (bits/phone)"] = kde(mis)
        if float(np.std(us)) > 0:
            curves["uncertainty coefficient"] = kde(us)
        if curves:
            csv_d = os.path.join(out_dir, "mi_density.csv")
            svg_d = os.path.join(out_dir, "mi_density.svg")
            write_density_csv(csv_d, curves)
            write_density_svg(svg_d, curves, title="density across languages")
            files["density_csv"] = csv_d
            files["density_svg"] = svg_d
    return BatchOutput(reports=reports, significant=significant,
                       failures=failures, aggregate=aggregate, files=files)


def _model_pair(lex: Lexicon, config: RunConfig, folds, tag: str):
    """Train (or reload) the uncond + meaning pair and score every sign."""
    models_dir = os.path.join(config.out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)
    losses = {}
    for kind in ("uncond", "meaning"):
        name = f"{kind}_{tag}.archive" if tag else f"{kind}.archive"
        path = os.path.join(models_dir, name)
        lm_cfg = make_lm_config(kind, dict(config.lm))
        if os.path.exists(path):
            archive = load_model(path)
            v_all = None
            if archive.cfg.uses_meaning:
                _, v_all = fit_meanings(
                    lex, archive.cfg.pca_d,
                    folds.roles(config.rotation)[0], config.pca_train_only)
            losses[kind] = evaluate(archive.params, archive.cfg, lex.signs,
                                    lex.inventory, v=v_all)
        else:
            res = train_kind(lex, folds, config.rotation, kind, lm_cfg,
                             OptSettings(**config.opt),
                             seed_for(config.seed, tag or "fwd"),
                             config.pca_train_only, score_all=True)
            save_model(path, res.cfg, lex.inventory, res.params,
                       pca=res.pca,
                       extra={"kind": kind, "language": config.language,
                              "orientation": tag or "forward"})
            losses[kind] = res.all_losses
    return losses["uncond"], losses["meaning"]


def run_phonesthemes(config: RunConfig, lex: Lexicon | None = None,
                     write: bool = True):
    """Mine prefix and suffix phonesthemes with freshly trained model pairs."""
    if lex is None:
        lex = resolve_lexicon(config)
    os.makedirs(config.out_dir, exist_ok=True)
    folds = split_folds(lex, config.folds, seed_for(config.seed, "folds"))
    uncond, cond = _model_pair(lex, config, folds, tag="")
    rev = reverse_forms(lex)
    rev_uncond, rev_cond = _model_pair(rev, config, folds, tag="rev")
    opts = config.phonesthemes
    candidates = mine(
        lex, uncond, cond,
        k_range=tuple(opts.get("k_range", (1, 2, 3))),
        min_count=int(opts.get("min_count", 20)),
        alpha=float(opts.get("alpha", 0.05)),
        n_samples=int(opts.get("n_samples", 100_000)),
        seed=seed_for(config.seed, "phonesthemes"),
        reversed_lex=rev, reversed_uncond=rev_uncond,
        reversed_cond=rev_cond)
    files = {}
    if write:
        table = os.path.join(config.out_dir, "phonesthemes.tsv")
        detail = os.path.join(config.out_dir, "phonesthemes_detail.tsv")
        write_phonesthemes_tsv(table, candidates)
        write_phonestheme_detail_tsv(detail, config.language, candidates)
        files = {"table": table, "detail": detail}
    return candidates, files


SYNTH_SPECS = {
    "two_cluster": two_cluster_spec,
    "independent": independent_spec,
    "planted_prefix": planted_prefix_spec,
}


def write_lexicon_tsv(path, lex: Lexicon, concepts=None) -> None:
    """Space-tokenized TSV in the canonical lemma/ipa/pos/concept schema."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lemma\tipa\tpos\tconcept\n")
        for i, sign in enumerate(lex.signs):
            concept = (concepts[i] if concepts is not None
                       else sign.concept_id or "")
            fh.write(f"{sign.lemma}\t{' '.join(sign.form)}\t{sign.pos}"
                     f"\t{concept}\n")


def write_embeddings(path, lex: Lexicon) -> None:
    dim = lex.signs[0].meaning.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(lex.signs)} {dim}\n")
        for sign in lex.signs:
            coords = " ".join(repr(float(x)) for x in sign.meaning)
            fh.write(f"{sign.lemma} {coords}\n")


def run_synth(spec_name: str, n_words: int, seed: int, out_dir: str) -> dict:
    """Materialize a synthetic language on disk with its ground truth."""
    if spec_name not in SYNTH_SPECS:
        raise ValueError(f"unknown spec {spec_name!r}; have "
                         f"{sorted(SYNTH_SPECS)}")
    spec = SYNTH_SPECS[spec_name]()
    lex, labels = generate(spec, n_words, seed)
    os.makedirs(out_dir, exist_ok=True)
    lex_path = os.path.join(out_dir, "lexicon.tsv")
    emb_path = os.path.join(out_dir, "embeddings.vec")
    truth_path = os.path.join(out_dir, "truth.json")
    write_lexicon_tsv(lex_path, lex,
                      concepts=[f"c{int(c)}" for c in labels])
    write_embeddings(emb_path, lex)
    entropy = exact_entropy(spec)
    write_json(truth_path, {
        "spec_name": spec_name,
        "n_words": n_words,
        "seed": seed,
        "exact_entropy_bits_per_phone": entropy.bits_per_phone,
        "exact_mi_bits_per_phone": exact_mi(spec),
        "cluster_labels": [int(c) for c in labels],
        "spec": spec.to_dict(),
    })
    return {"lexicon": lex_path, "embeddings": emb_path, "truth": truth_path}
