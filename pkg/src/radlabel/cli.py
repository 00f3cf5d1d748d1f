"""Command-line entry point: ingest, split, classify, eval, augment, export-sft."""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from pathlib import Path

from radlabel import augment as aug
from radlabel.backend import AuthenticationError, Backend, BackendError, ChatCompletionsBackend, MockBackend
from radlabel.config import ConfigError, RunConfig, load_config
from radlabel.corpus import (
    AnnotatedReport,
    DatasetError,
    TaxonomySpec,
    filter_findings_by_support,
    finding_supports,
    load_dataset,
    top_k_findings,
    write_dataset,
)
from radlabel.extractor import ParsedPrediction, parse_answer
from radlabel.metrics import CLASS_NAMES, evaluate, invalid_rate
from radlabel.promptgen import build_instruction, build_prompt, export_sft, sample_shots
from radlabel.report import format_table, write_eval
from radlabel.splitter import SUBSETS, apply_split, read_manifest, stratified_split, subsample, write_manifest

logger = logging.getLogger("radlabel")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def prepare(cfg: RunConfig) -> tuple[TaxonomySpec, dict[str, list[AnnotatedReport]]]:
    """Load the dataset, apply the persisted split and the configured finding filters."""
    dataset = load_dataset(cfg.dataset, cfg.taxonomy)
    if not cfg.manifest_path.exists():
        raise DatasetError(f"no split manifest at {cfg.manifest_path}; run 'split' first")
    parts = apply_split(dataset, read_manifest(cfg.manifest_path))
    taxonomy = cfg.taxonomy
    if cfg.min_support is not None:
        scope = parts["train"] if cfg.support_scope == "train" else None
        taxonomy, dataset = filter_findings_by_support(dataset, taxonomy, cfg.min_support, support_from=scope)
    if cfg.top_k is not None and cfg.top_k < len(taxonomy.findings):
        taxonomy, dataset = top_k_findings(dataset, taxonomy, cfg.top_k)
    by_id = {r.id: r for r in dataset}
    parts = {s: [by_id[r.id] for r in recs] for s, recs in parts.items()}
    return taxonomy, parts


def make_backend(cfg: RunConfig, field: str = "answer") -> Backend:
    ep = cfg.endpoint
    if ep.kind == "mock":
        answers: dict[str, str | BaseException] = {}
        if ep.mock_answers is not None:
            dataset = {r.id: r.text for r in load_dataset(cfg.dataset, cfg.taxonomy)}
            for row in _read_jsonl(ep.mock_answers):
                text = row.get("text") or dataset.get(str(row.get("id")))
                if text is None:
                    raise ConfigError(f"mock answer for unknown report {row.get('id')!r}")
                if row.get("error"):
                    answers[text] = BackendError("mock endpoint failure")
                elif field in row:
                    answers[text] = row[field]
        if field == "translation":
            return MockBackend(answers, responder=lambda b: b.target_text)
        return MockBackend(answers)
    return ChatCompletionsBackend(ep.url, ep.model, ep.api_key(), max_attempts=ep.max_attempts)


def cmd_ingest(cfg: RunConfig, args) -> int:
    dataset = load_dataset(cfg.dataset, cfg.taxonomy)
    supports = finding_supports(dataset, cfg.taxonomy)
    by_class = {
        f: {CLASS_NAMES[int(c)]: sum(r.labels[f] == int(c) for r in dataset) for c in cfg.taxonomy.scored_classes()}
        for f in cfg.taxonomy.findings
    }
    languages: dict[str, int] = {}
    for r in dataset:
        languages[r.report.language] = languages.get(r.report.language, 0) + 1
    summary = {
        "dataset_id": cfg.taxonomy.dataset_id,
        "n_reports": len(dataset),
        "avg_chars": statistics.fmean(len(r.text) for r in dataset) if dataset else 0.0,
        "languages": languages,
        "supports": supports,
        "supports_by_class": by_class,
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "ingest_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"{summary['dataset_id']}: {len(dataset)} reports, avg {summary['avg_chars']:.0f} chars, languages {languages}")
    for f in cfg.taxonomy.findings:
        detail = " ".join(f"{k}={v}" for k, v in by_class[f].items())
        print(f"  {f:<28} {supports[f]:>6}  {detail}")
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    dataset = load_dataset(cfg.dataset, cfg.taxonomy)
    sizes = None
    if cfg.dev_size is not None:
        n = len(dataset)
        test = round(cfg.fractions[2] * n)
        sizes = (n - cfg.dev_size - test, cfg.dev_size, test)
    split = stratified_split(dataset, cfg.taxonomy, cfg.fractions, cfg.seed, sizes=sizes)
    write_manifest(cfg.manifest_path, split)
    print(f"wrote {cfg.manifest_path}: " + ", ".join(f"{k}={v}" for k, v in split.sizes().items()))
    return EXIT_OK


def predictions_path(cfg: RunConfig, subset: str, shots: int) -> Path:
    return cfg.output_dir / f"predictions_{subset}_{shots}shot.jsonl"


def classify(
    cfg: RunConfig, backend: Backend, subset: str, shots: int
) -> tuple[list[AnnotatedReport], list[ParsedPrediction], list]:
    taxonomy, parts = prepare(cfg)
    targets = parts[subset]
    if not targets:
        raise DatasetError(f"subset {subset!r} is empty")
    train = parts["train"]
    if cfg.train_fraction < 1:
        train = subsample(train, taxonomy, cfg.train_fraction, cfg.seed)
    shot_pairs = sample_shots(train, shots, cfg.seed, taxonomy, cfg.balanced_shots)
    instruction = build_instruction(taxonomy)
    bundles = [build_prompt(instruction, shot_pairs, r) for r in targets]
    answers = backend.complete_batch(bundles, cfg.generation, max_in_flight=cfg.endpoint.max_in_flight)
    return targets, [parse_answer(a, taxonomy) for a in answers], answers


def cmd_classify(cfg: RunConfig, args) -> int:
    subset = args.subset
    shots = cfg.shots
    backend = make_backend(cfg)
    start = time.perf_counter()
    targets, preds, answers = classify(cfg, backend, subset, shots)
    wall = time.perf_counter() - start
    out = Path(args.out) if args.out else predictions_path(cfg, subset, shots)
    _write_jsonl(
        out,
        (
            {"id": r.id, "labels": p.labels, "valid": p.valid, "repairs": p.repairs, "finished_by": a.finished_by}
            for r, p, a in zip(targets, preds, answers)
        ),
    )
    rate = invalid_rate(preds)
    errors = sum(a.finished_by == "error" for a in answers)
    log_rows = [
        {"id": r.id, "finished_by": a.finished_by, "latency": a.latency, "valid": p.valid, "repairs": p.repairs,
         "raw": a.text, "error": a.error}
        for r, p, a in zip(targets, preds, answers)
    ]
    log_rows.append(
        {"summary": True, "subset": subset, "shots": shots, "n_reports": len(preds), "invalid_rate": rate,
         "errors": errors, "max_tokens": cfg.generation.token_budget(shots), "endpoint": backend.endpoint_id,
         "wall_time": wall}
    )
    _write_jsonl(out.with_name(out.stem + ".log.jsonl"), log_rows)
    print(f"wrote {out}: {len(preds)} predictions, invalid rate {rate:.2%}, {errors} endpoint errors, {wall:.1f}s")
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    taxonomy, parts = prepare(cfg)
    golds_list = parts[args.subset]
    rows = _read_jsonl(Path(args.predictions))
    try:
        preds = {str(r["id"]): {f: int(r["labels"][f]) for f in taxonomy.findings} for r in rows}
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{args.predictions}: malformed prediction row ({exc})") from exc
    golds = {r.id: r.labels for r in golds_list}
    if set(preds) != set(golds):
        raise DatasetError("predictions file does not match the gold subset")
    report = evaluate(preds, golds, taxonomy, [bool(r["valid"]) for r in rows])
    out_dir = Path(args.out) if args.out else cfg.output_dir / f"eval_{Path(args.predictions).stem}"
    write_eval(report, out_dir, figures=not args.no_figures)
    print(format_table(report), end="")
    return EXIT_OK


def cmd_augment(cfg: RunConfig, args) -> int:
    target = args.target_lang or cfg.target_lang
    if not target:
        raise ConfigError("no target language given (augment.target_lang or --target-lang)")
    taxonomy, parts = prepare(cfg)
    originals = parts[args.subset]
    backend = make_backend(cfg, field="translation")
    records = aug.translate_many(originals, target, backend, cfg.generation, cfg.endpoint.max_in_flight)
    failed = sum(r is None for r in records)
    done = [r for r in records if r is not None]
    kept, dropped = aug.length_filter(done, cfg.translation_max_tokens)
    if any(r.identity_direction for r in done):
        logger.warning("some reports are already in %s; translations are identity-direction", target)
    augmented = aug.build_augmented_set(originals, done, cfg.augment_mode)
    tag = aug.language_tag(target)
    out = Path(args.out) if args.out else cfg.output_dir / f"augmented_{args.subset}_{tag}_{cfg.augment_mode}.jsonl"
    write_dataset(out, augmented)
    _write_jsonl(
        out.with_name(out.stem + ".translations.jsonl"),
        ({"source_id": r.source_id, "target_lang": r.target_lang, "n_tokens": r.n_tokens, "kept": r.kept,
          "identity_direction": r.identity_direction} for r in done),
    )
    print(f"wrote {out}: {len(augmented)} records ({len(kept)} translations kept, {len(dropped)} over length, "
          f"{failed} failed)")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_export_sft(cfg: RunConfig, args) -> int:
    taxonomy, parts = prepare(cfg)
    records = parts[args.subset]
    if cfg.train_fraction < 1 and args.subset == "train":
        records = subsample(records, taxonomy, cfg.train_fraction, cfg.seed)
    out = Path(args.out) if args.out else cfg.output_dir / f"sft_{args.subset}.jsonl"
    n = export_sft(records, taxonomy, out)
    print(f"wrote {out}: {n} records")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "augment": cmd_augment,
    "export-sft": cmd_export_sft,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radlabel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("config", help="experiment YAML file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--output-dir", help="override the config output directory")
        return p

    add("ingest", "load and summarize the dataset")
    add("split", "write a stratified train/dev/test manifest")
    p = add("classify", "classify a subset through the configured endpoint")
    p.add_argument("--subset", choices=SUBSETS, default="test")
    p.add_argument("--shots", type=int, help="number of in-context examples (overrides config)")
    p.add_argument("--out")
    p = add("eval", "score a predictions file against gold labels")
    p.add_argument("predictions")
    p.add_argument("--subset", choices=SUBSETS, default="test")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p = add("augment", "translate a subset and write an augmented dataset")
    p.add_argument("--target-lang")
    p.add_argument("--subset", choices=SUBSETS, default="train")
    p.add_argument("--out")
    p = add("export-sft", "write instruction/input/completion records")
    p.add_argument("--subset", choices=SUBSETS, default="train")
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = cfg.override(
            seed=args.seed,
            output_dir=Path(args.output_dir).resolve() if args.output_dir else None,
            shots=getattr(args, "shots", None),
        )
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DatasetError, AuthenticationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
