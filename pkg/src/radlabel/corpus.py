"""Annotated report datasets: taxonomy model, loading, and label transforms."""
from __future__ import annotations

import csv
import enum
import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)

LANGUAGES = ("en", "es", "fr", "da")
TABLE_FIXED_COLUMNS = ("id", "language", "text")


class DatasetError(ValueError):
    """Raised when a dataset file or taxonomy violates the data model."""


class MentionClass(enum.IntEnum):
    """How a finding is mentioned in a report; the value is the integer code."""

    POSITIVE = 1
    NEGATIVE = 2
    UNCERTAIN = 0
    NOT_MENTIONED = -1

    @classmethod
    def parse(cls, name: str | int | MentionClass) -> MentionClass:
        if isinstance(name, (int, MentionClass)):
            return cls(int(name))
        key = name.strip().upper().replace("-", "_").replace(" ", "_")
        try:
            return cls[key]
        except KeyError:
            raise DatasetError(f"unknown mention class {name!r}") from None


NOT_MENTIONED = int(MentionClass.NOT_MENTIONED)


def normalize_finding(name: str) -> str:
    return name.strip().lower()


@dataclass(frozen=True)
class TaxonomySpec:
    """Finding vocabulary and permitted mention classes of one dataset."""

    dataset_id: str
    findings: tuple[str, ...]
    mention_classes: frozenset[MentionClass] = frozenset({MentionClass.POSITIVE})

    def __post_init__(self) -> None:
        findings = tuple(normalize_finding(f) for f in self.findings)
        if not findings:
            raise DatasetError(f"taxonomy {self.dataset_id!r} has no findings")
        if any(not f for f in findings):
            raise DatasetError(f"taxonomy {self.dataset_id!r} has an empty finding name")
        if len(set(findings)) != len(findings):
            raise DatasetError(f"taxonomy {self.dataset_id!r} has duplicate findings")
        classes = frozenset(MentionClass.parse(c) for c in self.mention_classes)
        if MentionClass.NOT_MENTIONED in classes:
            # always implied, never declared
            classes = classes - {MentionClass.NOT_MENTIONED}
        if MentionClass.POSITIVE not in classes:
            raise DatasetError(f"taxonomy {self.dataset_id!r} must allow positive mentions")
        object.__setattr__(self, "findings", findings)
        object.__setattr__(self, "mention_classes", classes)

    @property
    def allowed_codes(self) -> tuple[int, ...]:
        """Ascending integer codes a label may take, including not-mentioned."""
        return tuple(sorted({NOT_MENTIONED} | {int(c) for c in self.mention_classes}))

    @property
    def has_negative(self) -> bool:
        return MentionClass.NEGATIVE in self.mention_classes

    @property
    def has_uncertain(self) -> bool:
        return MentionClass.UNCERTAIN in self.mention_classes

    def scored_classes(self) -> list[MentionClass]:
        """Mention classes evaluated by the metrics, in code order."""
        return sorted(self.mention_classes, key=int)

    def restrict(self, keep: Iterable[str]) -> TaxonomySpec:
        keep = set(keep)
        return TaxonomySpec(
            self.dataset_id,
            tuple(f for f in self.findings if f in keep),
            self.mention_classes,
        )

    def empty_labels(self) -> dict[str, int]:
        return {f: NOT_MENTIONED for f in self.findings}


@dataclass(frozen=True)
class Report:
    id: str
    language: str
    text: str
    source: str = ""

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise DatasetError(f"report {self.id!r} has empty text")


@dataclass(frozen=True)
class AnnotatedReport:
    report: Report
    labels: dict[str, int] = field(default_factory=dict)

    @property
    def id(self) -> str:
        return self.report.id

    @property
    def text(self) -> str:
        return self.report.text

    def check(self, taxonomy: TaxonomySpec) -> None:
        if set(self.labels) != set(taxonomy.findings):
            raise DatasetError(f"report {self.id!r}: label keys do not match taxonomy")
        allowed = set(taxonomy.allowed_codes)
        for finding, code in self.labels.items():
            if code not in allowed:
                raise DatasetError(f"report {self.id!r}: code {code} not allowed for {finding!r}")


def map_certainty(score: int) -> int:
    """Collapse a 1-5 certainty score: probable findings (4, 5) are positive, the rest uncertain."""
    if isinstance(score, bool) or not isinstance(score, int) or not 1 <= score <= 5:
        raise ValueError(f"certainty score must be an integer in 1..5, got {score!r}")
    return int(MentionClass.POSITIVE) if score >= 4 else int(MentionClass.UNCERTAIN)


def _coerce_code(value: Any, where: str) -> int:
    if isinstance(value, bool):
        raise DatasetError(f"{where}: boolean is not a label code")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        text = value.strip()
        if text == "":
            return NOT_MENTIONED
        try:
            number = float(text)
        except ValueError:
            number = float("nan")
        if number.is_integer():
            return int(number)
    raise DatasetError(f"{where}: unparseable label value {value!r}")


def _make_record(
    raw_id: Any,
    language: Any,
    text: Any,
    raw_labels: dict[str, Any],
    taxonomy: TaxonomySpec,
    where: str,
) -> AnnotatedReport:
    if raw_id is None or str(raw_id) == "":
        raise DatasetError(f"{where}: missing id")
    if not isinstance(text, str) or not text.strip():
        raise DatasetError(f"{where}: missing or empty text")
    language = (language or "").strip().lower()
    if language not in LANGUAGES:
        raise DatasetError(f"{where}: unsupported language {language!r}")
    allowed = set(taxonomy.allowed_codes)
    known = set(taxonomy.findings)
    labels = taxonomy.empty_labels()
    for key, value in raw_labels.items():
        finding = normalize_finding(str(key))
        if finding not in known:
            raise DatasetError(f"{where}: unknown finding key {key!r}")
        code = _coerce_code(value, f"{where}, finding {key!r}")
        if code not in allowed:
            raise DatasetError(f"{where}: code {code} not allowed for finding {key!r}")
        labels[finding] = code
    report = Report(str(raw_id), language, text, taxonomy.dataset_id)
    return AnnotatedReport(report, labels)


def _read_records(path: Path, taxonomy: TaxonomySpec) -> list[AnnotatedReport]:
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: invalid record ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{where}: record is not an object")
            labels = obj.get("labels", {})
            if not isinstance(labels, dict):
                raise DatasetError(f"{where}: labels must be an object")
            out.append(_make_record(obj.get("id"), obj.get("language"), obj.get("text"), labels, taxonomy, where))
    return out


def _read_table(path: Path, taxonomy: TaxonomySpec) -> list[AnnotatedReport]:
    delimiter = "\t" if path.suffix.lower() == ".tsv" else ","
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        missing = [c for c in TABLE_FIXED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DatasetError(f"{path.name}: missing columns {missing}")
        for rowno, row in enumerate(reader, start=2):
            labels = {k: v for k, v in row.items() if k not in TABLE_FIXED_COLUMNS}
            out.append(
                _make_record(row["id"], row["language"], row["text"], labels, taxonomy, f"{path.name}:{rowno}")
            )
    return out


def load_dataset(path: str | Path, taxonomy: TaxonomySpec) -> list[AnnotatedReport]:
    """Load a ``.jsonl`` record file or a ``.csv``/``.tsv`` table.

    Findings absent from a record are filled with the not-mentioned code.
    Any malformed record aborts loading with a :class:`DatasetError`.
    """
    path = Path(path)
    try:
        if path.suffix.lower() in (".csv", ".tsv"):
            records = _read_table(path, taxonomy)
        else:
            records = _read_records(path, taxonomy)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise DatasetError(f"{path.name}: duplicate report id {rec.id!r}")
        seen.add(rec.id)
    logger.debug("loaded %d reports from %s", len(records), path)
    return records


def record_to_dict(rec: AnnotatedReport) -> dict[str, Any]:
    return {"id": rec.id, "language": rec.report.language, "text": rec.text, "labels": dict(rec.labels)}


def write_dataset(path: str | Path, dataset: Sequence[AnnotatedReport]) -> None:
    """Write records in the line-delimited input format so they can be loaded again."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in dataset:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False) + "\n")


def finding_supports(dataset: Iterable[AnnotatedReport], taxonomy: TaxonomySpec) -> dict[str, int]:
    """Number of reports mentioning each finding in any way (code other than -1)."""
    supports = dict.fromkeys(taxonomy.findings, 0)
    for rec in dataset:
        for f in taxonomy.findings:
            if rec.labels.get(f, NOT_MENTIONED) != NOT_MENTIONED:
                supports[f] += 1
    return supports


def _prune(dataset: Sequence[AnnotatedReport], taxonomy: TaxonomySpec) -> list[AnnotatedReport]:
    return [AnnotatedReport(r.report, {f: r.labels[f] for f in taxonomy.findings}) for r in dataset]


def filter_findings_by_support(
    dataset: Sequence[AnnotatedReport],
    taxonomy: TaxonomySpec,
    min_count: int,
    support_from: Sequence[AnnotatedReport] | None = None,
) -> tuple[TaxonomySpec, list[AnnotatedReport]]:
    """Keep findings mentioned in at least ``min_count`` reports.

    Supports are counted over ``support_from`` when given (e.g. the training
    split only), otherwise over ``dataset`` itself.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    supports = finding_supports(dataset if support_from is None else support_from, taxonomy)
    keep = [f for f in taxonomy.findings if supports[f] >= min_count]
    if not keep:
        raise DatasetError(f"no finding reaches a support of {min_count}")
    new_tax = taxonomy.restrict(keep)
    return new_tax, _prune(dataset, new_tax)


def top_k_findings(
    dataset: Sequence[AnnotatedReport], taxonomy: TaxonomySpec, k: int
) -> tuple[TaxonomySpec, list[AnnotatedReport]]:
    """Keep the ``k`` most frequently mentioned findings; ties go to the earlier finding."""
    if not 1 <= k <= len(taxonomy.findings):
        raise ValueError(f"k must be in 1..{len(taxonomy.findings)}, got {k}")
    supports = finding_supports(dataset, taxonomy)
    order = {f: i for i, f in enumerate(taxonomy.findings)}
    ranked = sorted(taxonomy.findings, key=lambda f: (-supports[f], order[f]))
    new_tax = taxonomy.restrict(ranked[:k])
    return new_tax, _prune(dataset, new_tax)
