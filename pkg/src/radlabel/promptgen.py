"""Taxonomy-conditional instruction prompts, few-shot bundles and SFT export."""
from __future__ import annotations

import json
import random
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from radlabel.corpus import AnnotatedReport, MentionClass, TaxonomySpec

HEADER = (
    "You are a helpful radiology assistant. Given a radiology report, classify each abnormality into a class. "
    "Output a valid JSON with each abnormality as key, and the class as value. "
    "The keys must be {findings}. The values can be one of {classes}. "
    "The values have the following interpretation:"
)

# Clauses end with their own separator; they are joined to the header with single spaces.
CLAUSE_POSITIVE = "(1) the abnormality was positively mentioned in the report; "
CLAUSE_POSITIVE_ANY = (
    "(1) the abnormality was mentioned, even with uncertainty, in the report e.g. "
    "'A large pleural effusion', 'The cardiac contours are stable.', 'The cardiac size cannot be evaluated.'; "
)
CLAUSE_NEGATIVE = "(2) the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'"
CLAUSE_UNCERTAIN = (
    "(0) the abnormality was either: mentioned with uncertainty in the report,or mentioned with ambiguous "
    "language in the report and it is unclear if the pathology exists or not, e.g. Explicit uncertainty: "
    "'The cardiac size cannot be evaluated.', Ambiguous language: 'The cardiac contours are stable.'"
)
CLAUSE_ABSENT = "(-1) the abnormality was not mentioned in the report."
CLAUSE_ABSENT_OR_NEGATED = (
    "(-1) the abnormality was not mentioned in the report, or the abnormality was negatively mentioned "
    "in the report; e.g. 'No pneumothorax.'."
)

TRANSLATION_TEMPLATE = "Translate this text into {language}. Respond only with the translation."


@dataclass(frozen=True)
class PromptBundle:
    instruction: str
    shots: tuple[tuple[str, str], ...] = ()
    target_text: str = ""

    def messages(self) -> list[dict[str, str]]:
        """Chat turns: instruction, then one user/assistant pair per shot, then the target report."""
        turns = [{"role": "system", "content": self.instruction}]
        for report_text, answer in self.shots:
            turns.append({"role": "user", "content": report_text})
            turns.append({"role": "assistant", "content": answer})
        turns.append({"role": "user", "content": self.target_text})
        return turns


@dataclass(frozen=True)
class SftRecord:
    instruction: str
    input: str
    completion: str

    def to_dict(self) -> dict[str, str]:
        return {"instruction": self.instruction, "input": self.input, "completion": self.completion}


def _quoted_list(findings: Sequence[str]) -> str:
    return "[" + ", ".join(f"'{f}'" for f in findings) + "]"


def build_instruction(taxonomy: TaxonomySpec) -> str:
    findings = _quoted_list(taxonomy.findings)
    classes = "[" + ", ".join(str(c) for c in taxonomy.allowed_codes) + "]"
    clauses = [CLAUSE_POSITIVE if taxonomy.has_uncertain else CLAUSE_POSITIVE_ANY]
    if taxonomy.has_negative:
        clauses.append(CLAUSE_NEGATIVE)
    if taxonomy.has_uncertain:
        clauses.append(CLAUSE_UNCERTAIN)
    clauses.append(CLAUSE_ABSENT if taxonomy.has_negative else CLAUSE_ABSENT_OR_NEGATED)
    return " ".join([HEADER.format(findings=findings, classes=classes), *clauses])


def serialize_answer(labels: dict[str, int], taxonomy: TaxonomySpec) -> str:
    """Canonical single-line JSON answer with keys in taxonomy order."""
    return json.dumps({f: int(labels[f]) for f in taxonomy.findings}, ensure_ascii=False)


def sample_shots(
    train: Sequence[AnnotatedReport],
    n: int,
    seed: int = 42,
    taxonomy: TaxonomySpec | None = None,
    balanced: bool = False,
) -> list[tuple[str, str]]:
    """Draw ``n`` distinct training reports as (text, serialized answer) pairs.

    Uniform without replacement by default. With ``balanced=True`` the draw
    cycles through findings, preferring reports that positively mention a
    finding not yet covered by earlier shots.
    """
    if n < 0 or n > len(train):
        raise ValueError(f"cannot draw {n} shots from {len(train)} training reports")
    if n == 0:
        return []
    rng = random.Random(seed)
    if taxonomy is None:
        taxonomy = TaxonomySpec("shots", tuple(train[0].labels))
    if balanced:
        picked = _balanced_draw(train, n, rng, taxonomy)
    else:
        picked = rng.sample(range(len(train)), n)
    return [(train[i].text, serialize_answer(train[i].labels, taxonomy)) for i in picked]


def _balanced_draw(train: Sequence[AnnotatedReport], n: int, rng: random.Random, taxonomy: TaxonomySpec) -> list[int]:
    order = list(range(len(train)))
    rng.shuffle(order)
    covered: set[str] = set()
    picked: list[int] = []
    while len(picked) < n:
        best = None
        best_gain = -1
        for i in order:
            if i in picked:
                continue
            gain = sum(
                1 for f, c in train[i].labels.items() if c == MentionClass.POSITIVE and f not in covered
            )
            if gain > best_gain:
                best, best_gain = i, gain
        assert best is not None
        picked.append(best)
        covered.update(f for f, c in train[best].labels.items() if c == MentionClass.POSITIVE)
        if len(covered) == len(taxonomy.findings):
            covered.clear()
    return picked


def build_prompt(instruction: str, shots: Sequence[tuple[str, str]], report: AnnotatedReport | str) -> PromptBundle:
    text = report if isinstance(report, str) else report.text
    return PromptBundle(instruction, tuple((str(t), str(a)) for t, a in shots), text)


def translation_bundle(text: str, language: str) -> PromptBundle:
    return PromptBundle(TRANSLATION_TEMPLATE.format(language=language), (), text)


def sft_records(dataset: Sequence[AnnotatedReport], taxonomy: TaxonomySpec) -> list[SftRecord]:
    instruction = build_instruction(taxonomy)
    return [SftRecord(instruction, rec.text, serialize_answer(rec.labels, taxonomy)) for rec in dataset]


def export_sft(dataset: Sequence[AnnotatedReport], taxonomy: TaxonomySpec, out_path: str | Path) -> int:
    """Write instruction/input/completion records, one per line; returns the count."""
    out_path = Path(out_path)
    records = sft_records(dataset, taxonomy)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    return len(records)
