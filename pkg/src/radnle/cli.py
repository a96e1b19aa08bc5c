"""Command-line interface: extract, stats, label, audit-rules, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 audit failure.
Machine-readable output goes to stdout/files only; logging to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import NoReturn

from . import __version__
from .config import (
    ConfigError,
    load_config,
    load_keyword_lexicon,
    load_mention_lexicon,
)
from .corpus import CorpusFormatError, IngestError, load_corpus
from .keywords import default_lexicon
from .labels import (
    CERTAINTY_TO_VALUE,
    EXTERNAL_LABEL_COLUMNS,
    Label,
    LabelsFormatError,
    default_mention_lexicon,
    label_sentence,
    load_external_labels,
)
from .metrics import EvalFormatError, builtin_text_labeler, evaluate
from .pipeline import PipelineConfig, iter_sentences, run_pipeline
from .rules import audit_exclusivity, rule_table_hash

log = logging.getLogger("radnle")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_AUDIT = 3


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="radnle", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"radnle {__version__} (rules {rule_table_hash()})",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="log more to stderr (-v info, -vv debug)",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    extract = sub.add_parser("extract", help="run the extraction funnel")
    extract.add_argument("--corpus", required=True, help="report root directory")
    extract.add_argument("--metadata", required=True, help="image metadata CSV")
    extract.add_argument("--splits", help="study split CSV")
    extract.add_argument("--manifest", help="study_id,path manifest CSV for non-standard layouts")
    extract.add_argument("--out", required=True, help="output directory")
    extract.add_argument("--labeler", choices=("builtin", "external"))
    extract.add_argument("--labels-file", help="external sentence label CSV")
    extract.add_argument("--lexicon", help="keyword lexicon TOML")
    extract.add_argument("--mention-lexicon", help="mention lexicon TOML")
    extract.add_argument("--config", help="pipeline config TOML")
    extract.add_argument("--jobs", type=int)
    extract.add_argument(
        "--dedup-ignore-certainty",
        action="store_true",
        default=None,
        help="dedup on diagnosis labels only, ignoring certainty",
    )
    extract.set_defaults(func=cmd_extract)

    stats = sub.add_parser("stats", help="pretty-print a stats.json")
    stats.add_argument("path", help="stats.json or the directory containing it")
    stats.set_defaults(func=cmd_stats)

    label = sub.add_parser("label", help="emit per-sentence labels as CSV")
    label.add_argument("--corpus", required=True)
    label.add_argument("--metadata", required=True)
    label.add_argument("--splits")
    label.add_argument("--manifest")
    label.add_argument("--mention-lexicon")
    label.add_argument("--out", default="-", help="output CSV ('-' = stdout)")
    label.set_defaults(func=cmd_label)

    audit = sub.add_parser("audit-rules", help="exhaustive rule-exclusivity check")
    audit.set_defaults(func=cmd_audit)

    ev = sub.add_parser("evaluate", help="score predictions and explanations")
    ev.add_argument("--eval", dest="eval_file", required=True, help="eval pairs JSONL")
    ev.add_argument("--preds", required=True, help="prediction matrix CSV")
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--threshold", type=float)
    ev.add_argument(
        "--clev-labeler",
        choices=("builtin", "precomputed"),
        default="builtin",
        help="evidence source: built-in labeler or gt/gen_evidence columns",
    )
    ev.add_argument("--mention-lexicon")
    ev.add_argument("--pathologies", help="comma-separated label names (axis order)")
    ev.add_argument("--config", help="pipeline config TOML")
    ev.set_defaults(func=cmd_evaluate)

    return parser


def _setting(flag_value, config: dict, key: str, default):
    """flags > config file > default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def cmd_extract(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else {}
    keyword_lexicon = (
        load_keyword_lexicon(args.lexicon)
        if args.lexicon
        else config.get("keyword_lexicon", default_lexicon())
    )
    mention_lexicon = (
        load_mention_lexicon(args.mention_lexicon)
        if args.mention_lexicon
        else config.get("mention_lexicon", default_mention_lexicon())
    )
    labeler = _setting(args.labeler, config, "labeler", "builtin")
    labels_file = _setting(args.labels_file, config, "labels_file", None)
    if labeler == "external":
        if not labels_file:
            print("error: --labeler external requires --labels-file", file=sys.stderr)
            return EXIT_USAGE
        external = load_external_labels(labels_file)
    else:
        external = None
    jobs = int(_setting(args.jobs, config, "jobs", 1))
    dedup_flag = bool(
        _setting(args.dedup_ignore_certainty, config, "dedup_ignore_certainty", False)
    )

    pipeline_config = PipelineConfig(
        keyword_lexicon=keyword_lexicon,
        mention_lexicon=mention_lexicon,
        external_labels=external,
        dedup_ignore_certainty=dedup_flag,
    )
    errors: list[IngestError] = []
    reports = load_corpus(
        args.corpus,
        args.metadata,
        args.splits,
        manifest_file=args.manifest,
        errors=errors,
    )
    result = run_pipeline(
        reports, pipeline_config, args.out, jobs=jobs, ingest_errors=errors
    )
    log.info(
        "funnel: %s -> %d records (%d triplets), %d studies skipped",
        "/".join(str(n) for n in result.funnel.as_sequence()),
        result.n_records,
        result.n_triplets,
        result.n_skipped,
    )
    return EXIT_OK


def _print_histogram(title: str, rows: list) -> None:
    print(f"{title}:")
    if not rows:
        print("  (none)")
        return
    width = max(len(key) for key, _ in rows)
    for key, count in rows:
        print(f"  {key:<{width}}  {count}")


def cmd_stats(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "stats.json"
    with open(path, encoding="utf-8") as handle:
        stats = json.load(handle)
    print(f"schema_version: {stats.get('schema_version')}")
    print("funnel:")
    for key, value in stats.get("funnel", {}).items():
        print(f"  {key:<28}  {value}")
    print(f"records: {stats.get('n_records')}   triplets: {stats.get('n_triplets')}")
    _print_histogram("diagnosis label combinations", stats.get("diagnosis_combinations", []))
    _print_histogram("evidence combinations", stats.get("evidence_combinations", []))
    _print_histogram("explanation keywords", stats.get("explanation_keywords", []))
    return EXIT_OK


def cmd_label(args: argparse.Namespace) -> int:
    mention_lexicon = (
        load_mention_lexicon(args.mention_lexicon)
        if args.mention_lexicon
        else default_mention_lexicon()
    )
    errors: list[IngestError] = []
    reports = load_corpus(
        args.corpus,
        args.metadata,
        args.splits,
        manifest_file=args.manifest,
        errors=errors,
    )

    def write_rows(handle) -> None:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(EXTERNAL_LABEL_COLUMNS)
        for report in reports:
            for sentence in iter_sentences(report):
                state = label_sentence(sentence, mention_lexicon)
                writer.writerow(
                    [sentence.study_id, sentence.section.value, sentence.index]
                    + [CERTAINTY_TO_VALUE[state[label]] for label in Label]
                )

    if args.out == "-":
        write_rows(sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as handle:
            write_rows(handle)
    for error in errors:
        log.warning("study %s: %s", error.study_id, error.reason)
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    report = audit_exclusivity()
    print(report.format_table())
    return EXIT_OK if report.exclusive else EXIT_AUDIT


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else {}
    threshold = float(_setting(args.threshold, config, "threshold", 0.5))
    if args.pathologies:
        pathologies = tuple(
            Label.from_display(name.strip()) for name in args.pathologies.split(",")
        )
    else:
        pathologies = config.get("pathologies")
    mention_lexicon = (
        load_mention_lexicon(args.mention_lexicon)
        if args.mention_lexicon
        else config.get("mention_lexicon", default_mention_lexicon())
    )
    if args.clev_labeler == "precomputed":
        from .metrics import read_eval_pairs

        for pair in read_eval_pairs(args.eval_file):
            if pair.gt_evidence is None or pair.gen_evidence is None:
                raise EvalFormatError(
                    f"--clev-labeler precomputed needs gt_evidence/gen_evidence "
                    f"columns on every pair (missing for image {pair.image_id!r})"
                )
    report = evaluate(
        args.eval_file,
        args.preds,
        args.out,
        threshold=threshold,
        text_labeler=builtin_text_labeler(mention_lexicon),
        pathologies=pathologies,
    )
    print(report.format_table())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help/--version or usage error
        code = exc.code
        return code if isinstance(code, int) else EXIT_OK
    logging.basicConfig(
        stream=sys.stderr,
        level=(
            logging.WARNING
            if args.verbose == 0
            else logging.INFO
            if args.verbose == 1
            else logging.DEBUG
        ),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (
        CorpusFormatError,
        LabelsFormatError,
        EvalFormatError,
        ConfigError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
