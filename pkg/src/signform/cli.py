"""Command-line front end.

Every command reads one JSON config document, honors the global overrides
(--seed, --threads, --out, then SIGNFORM_SEED / SIGNFORM_THREADS), prints a
short human summary to stdout, and on failure emits one machine-readable
JSON error line and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .lexicon import split_folds
from .pipeline import (
    RunConfig,
    load_config,
    resolve_lexicon,
    run_batch,
    run_estimate,
    run_phonesthemes,
    run_synth,
    search_lm,
    seed_for,
)
from .reports import read_json, write_json, write_report_csv_rows
from .validate import CRITERIA, battery_passed, run_battery


def _env_int(name: str):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{name} must be an integer, got {raw!r}")


def _resolve_overrides(args) -> dict:
    """CLI flag beats environment variable beats config file."""
    seed = args.seed if args.seed is not None else _env_int("SIGNFORM_SEED")
    threads = (args.threads if args.threads is not None
               else _env_int("SIGNFORM_THREADS"))
    return {"seed": seed, "threads": threads, "out_dir": args.out}


def _load_run_config(args) -> RunConfig:
    if not args.config:
        raise ValueError("this command needs --config pointing at a JSON "
                         "config document")
    return load_config(args.config, **_resolve_overrides(args))


def _fail(exc: Exception, stage: str, out_dir: str | None = None) -> int:
    record = {"error": type(exc).__name__, "message": str(exc),
              "stage": stage}
    print(json.dumps(record, sort_keys=True))
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            write_json(os.path.join(out_dir, "error.json"), record)
        except OSError:
            pass
    return 1


def _clear_stale_error(out_dir: str) -> None:
    try:
        os.remove(os.path.join(out_dir, "error.json"))
    except OSError:
        pass


def cmd_estimate(args) -> int:
    try:
        config = _load_run_config(args)
        out = run_estimate(config)
    except Exception as exc:
        return _fail(exc, "estimate", args.out)
    _clear_stale_error(out.out_dir)
    rep = out.report
    print(f"{rep.language}: H(W) {rep.h_w.bits_per_phone:.3f} bits/phone, "
          f"MI {rep.mi:.3f}, U {100 * rep.uncertainty:.2f}%, "
          f"p {rep.p_value:.5f}")
    for name, path in sorted(out.files.items()):
        print(f"  {name}: {path}")
    return 0


def cmd_batch(args) -> int:
    try:
        if not args.config:
            raise ValueError("batch needs --config with a languages list")
        doc = read_json(args.config)
        overrides = _resolve_overrides(args)
        out_dir = overrides.pop("out_dir") or doc.get("out_dir") or "."
        threads = overrides.pop("threads") or int(doc.get("threads", 1))
        configs = []
        for entry in doc["languages"]:
            entry = dict(entry)
            if overrides["seed"] is not None:
                entry["seed"] = overrides["seed"]
            configs.append(RunConfig.from_dict(entry))
        out = run_batch(configs, out_dir, threads=threads)
    except Exception as exc:
        return _fail(exc, "batch", args.out)
    for rep in out.reports:
        flags = out.significant[rep.language]
        mark = "*" if flags["significant"] else " "
        print(f"{mark} {rep.language}: U {100 * rep.uncertainty:.2f}%, "
              f"adjusted p {flags['p_adjusted']:.5f}")
    for language, err in sorted(out.failures.items()):
        print(f"! {language}: {err['error']}: {err['message']}")
    agg = out.aggregate
    print(f"mean U {100 * agg['u_mean']:.2f}% over {agg['n_languages']} "
          f"languages, {agg['n_significant']} significant, "
          f"{agg['n_failed']} failed")
    return 0


def cmd_phonesthemes(args) -> int:
    try:
        config = _load_run_config(args)
        candidates, files = run_phonesthemes(config)
    except Exception as exc:
        return _fail(exc, "phonesthemes", args.out)
    _clear_stale_error(config.out_dir)
    significant = [c for c in candidates if c.bh_significant]
    for cand in significant:
        print(f"{cand.affix_string()}\tcount {cand.count}\t"
              f"adjusted p {cand.p_adjusted:.5f}")
    print(f"{len(significant)} significant of {len(candidates)} candidates")
    for name, path in sorted(files.items()):
        print(f"  {name}: {path}")
    return 0


def cmd_hyperopt(args) -> int:
    try:
        config = _load_run_config(args)
        if config.hyperopt_budget < 1:
            raise ValueError("hyperopt needs hyperopt_budget >= 1 in the "
                             "config")
        lex = resolve_lexicon(config)
        folds = split_folds(lex, config.folds, seed_for(config.seed,
                                                        "folds"))
        os.makedirs(config.out_dir, exist_ok=True)
        best_by_kind = {}
        log_path = os.path.join(config.out_dir, "search.jsonl")
        with open(log_path, "w", encoding="utf-8") as fh:
            for kind in config.model_kinds:
                best, trials = search_lm(lex, folds, config.rotation, kind,
                                         config)
                best_by_kind[kind] = best
                for t in trials:
                    rec = json.loads(t.to_json())
                    rec["kind"] = kind
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        best_path = os.path.join(config.out_dir, "best.json")
        write_json(best_path, best_by_kind)
    except Exception as exc:
        return _fail(exc, "hyperopt", args.out)
    _clear_stale_error(config.out_dir)
    for kind, best in best_by_kind.items():
        print(f"{kind}: {json.dumps(best, sort_keys=True)}")
    print(f"  search_log: {log_path}")
    print(f"  best: {best_path}")
    return 0


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else (
        _env_int("SIGNFORM_SEED") or 0)
    out_dir = args.out or "."
    try:
        files = run_synth(args.spec, args.n_words, seed, out_dir)
    except Exception as exc:
        return _fail(exc, "synth", args.out)
    for name, path in sorted(files.items()):
        print(f"  {name}: {path}")
    return 0


def cmd_validate(args) -> int:
    if args.list:
        for cid, title, _fn in CRITERIA:
            print(f"{cid}  {title}")
        return 0
    hooks = {}
    if args.inject_gradient_fault:
        hooks["gradient_fault"] = 1e-3
    if args.config:
        hooks["full_scale_config"] = args.config
    ids = args.only or None
    try:
        results = run_battery(ids=ids, progress=print, **hooks)
    except ValueError as exc:
        return _fail(exc, "validate")
    return 0 if battery_passed(results) else 1


def cmd_report(args) -> int:
    """Re-render the display CSV from a stored unrounded JSON report."""
    try:
        if not args.config:
            raise ValueError("report needs --config pointing at a "
                             "report.json file")
        payload = read_json(args.config)
        rows = payload.get("reports") or [payload["report"]]
        out_dir = args.out or os.path.dirname(os.path.abspath(args.config))
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "report.csv")
        write_report_csv_rows(csv_path, rows)
    except Exception as exc:
        return _fail(exc, "report", args.out)
    print(f"  report_csv: {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signform",
        description="Estimate form-meaning systematicity of phone-"
                    "transcribed lexica and mine phonesthemes.")
    parser.add_argument("--config", metavar="PATH",
                        help="JSON config document")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="master seed override (beats SIGNFORM_SEED)")
    parser.add_argument("--threads", type=int, metavar="N",
                        help="worker threads (beats SIGNFORM_THREADS)")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("estimate", help="entropy/MI pipeline for one language")
    sub.add_parser("batch", help="many languages, correction, aggregates")
    sub.add_parser("phonesthemes", help="mine prefix/suffix phonesthemes")
    sub.add_parser("hyperopt",
                   help="hyperparameter search only, write search.jsonl")

    synth = sub.add_parser("synth", help="write a synthetic benchmark corpus")
    synth.add_argument("--spec", required=True,
                       choices=("two_cluster", "independent",
                                "planted_prefix"))
    synth.add_argument("--n-words", type=int, default=1000)

    validate = sub.add_parser("validate",
                              help="run the validation battery")
    validate.add_argument("--list", action="store_true",
                          help="print criteria without running")
    validate.add_argument("--only", nargs="*", metavar="ID",
                          help="run a subset of criteria, e.g. c03 c05")
    validate.add_argument("--inject-gradient-fault", action="store_true",
                          help=argparse.SUPPRESS)

    sub.add_parser("report", help="re-render CSV from a JSON report")
    return parser


COMMANDS = {
    "estimate": cmd_estimate,
    "batch": cmd_batch,
    "phonesthemes": cmd_phonesthemes,
    "hyperopt": cmd_hyperopt,
    "synth": cmd_synth,
    "validate": cmd_validate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
