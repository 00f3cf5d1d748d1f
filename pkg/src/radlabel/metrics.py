"""Classification metrics (per-finding F1, macro, weighted, invalid rate, mismatches) and METEOR."""
from __future__ import annotations

import math
import re
import unicodedata
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from radlabel.corpus import MentionClass, TaxonomySpec

Labels = Mapping[str, int]
LabelTable = Mapping[str, Labels]  # report id -> finding -> code

CLASS_NAMES = {1: "positive", 2: "negative", 0: "uncertain", -1: "not_mentioned"}


class MetricError(ValueError):
    pass


def _check_aligned(preds: LabelTable, golds: LabelTable) -> None:
    if set(preds) != set(golds):
        missing = sorted(set(golds) ^ set(preds))[:5]
        raise MetricError(f"predictions and gold labels cover different reports, e.g. {missing}")


def confusion(preds: LabelTable, golds: LabelTable, finding: str, class_code: int) -> tuple[int, int, int]:
    """One-vs-rest (tp, fp, fn) for ``class_code`` on one finding."""
    _check_aligned(preds, golds)
    tp = fp = fn = 0
    for rid, gold in golds.items():
        g = gold[finding] == class_code
        p = preds[rid][finding] == class_code
        tp += g and p
        fp += p and not g
        fn += g and not p
    return tp, fp, fn


def f1_from_counts(tp: int, fp: int, fn: int) -> float | None:
    """F1 score, or ``None`` when the class is neither present nor predicted."""
    if min(tp, fp, fn) < 0:
        raise MetricError("counts must be nonnegative")
    denom = 2 * tp + fp + fn
    return None if denom == 0 else 2 * tp / denom


def _precision_recall(tp: int, fp: int, fn: int) -> tuple[float | None, float | None]:
    p = tp / (tp + fp) if tp + fp else None
    r = tp / (tp + fn) if tp + fn else None
    return p, r


@dataclass(frozen=True)
class ClassScore:
    precision: float | None
    recall: float | None
    f1: float | None
    support: int


def per_finding_scores(
    preds: LabelTable, golds: LabelTable, taxonomy: TaxonomySpec
) -> dict[str, dict[int, ClassScore]]:
    _check_aligned(preds, golds)
    out: dict[str, dict[int, ClassScore]] = {}
    for finding in taxonomy.findings:
        out[finding] = {}
        for cls in taxonomy.scored_classes():
            tp, fp, fn = confusion(preds, golds, finding, int(cls))
            p, r = _precision_recall(tp, fp, fn)
            out[finding][int(cls)] = ClassScore(p, r, f1_from_counts(tp, fp, fn), tp + fn)
    return out


def macro_f1(preds: LabelTable, golds: LabelTable, taxonomy: TaxonomySpec, class_code: int) -> float:
    """Mean per-finding F1 for one mention class, skipping findings where F1 is undefined."""
    if class_code not in {int(c) for c in taxonomy.mention_classes}:
        raise MetricError(f"class {class_code} is not part of taxonomy {taxonomy.dataset_id!r}")
    scores = [
        f1 for f in taxonomy.findings if (f1 := f1_from_counts(*confusion(preds, golds, f, class_code))) is not None
    ]
    if not scores:
        raise MetricError(f"no finding has a defined F1 for class {class_code}")
    return sum(scores) / len(scores)


def weighted_f1(preds: LabelTable, golds: LabelTable, taxonomy: TaxonomySpec) -> float:
    """Support-weighted mean of F1 over every (finding, mention class) cell."""
    num = 0.0
    total = 0
    for finding in taxonomy.findings:
        for cls in taxonomy.scored_classes():
            tp, fp, fn = confusion(preds, golds, finding, int(cls))
            f1 = f1_from_counts(tp, fp, fn)
            if f1 is None:
                continue
            num += (tp + fn) * f1
            total += tp + fn
    if total == 0:
        raise MetricError("total gold support is zero")
    return num / total


def invalid_rate(predictions: Sequence) -> float:
    """Share of predictions flagged invalid. Accepts objects with ``.valid`` or booleans."""
    if not predictions:
        raise MetricError("no predictions")
    flags = [p if isinstance(p, bool) else p.valid for p in predictions]
    return sum(not v for v in flags) / len(flags)


def count_mismatches(preds: LabelTable, golds: LabelTable, taxonomy: TaxonomySpec) -> tuple[int, float]:
    """Number and share of (report, finding) cells where prediction and gold differ."""
    _check_aligned(preds, golds)
    count = sum(preds[rid][f] != golds[rid][f] for rid in golds for f in taxonomy.findings)
    cells = len(golds) * len(taxonomy.findings)
    return count, (count / cells if cells else 0.0)


@dataclass
class EvalReport:
    dataset_id: str
    per_finding: dict[str, dict[str, dict[str, float | int | None]]]
    macro_pos_f1: float | None
    macro_neg_f1: float | None
    weighted_f1: float | None
    invalid_rate: float
    n_reports: int
    mismatches: int
    mismatch_rate: float
    meta: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "macro_pos_f1": self.macro_pos_f1,
            "macro_neg_f1": self.macro_neg_f1,
            "weighted_f1": self.weighted_f1,
            "invalid_rate": self.invalid_rate,
            "n_reports": self.n_reports,
            "mismatches": self.mismatches,
            "mismatch_rate": self.mismatch_rate,
            "per_finding": self.per_finding,
            "meta": self.meta,
        }


def _or_none(fn, *args):
    try:
        return fn(*args)
    except MetricError:
        return None


def evaluate(
    preds: LabelTable, golds: LabelTable, taxonomy: TaxonomySpec, validity: Sequence[bool] | None = None
) -> EvalReport:
    """Build the full evaluation report; aggregates with no defined value are ``None``."""
    scores = per_finding_scores(preds, golds, taxonomy)
    per_finding = {
        f: {
            CLASS_NAMES[c]: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
            for c, s in by_class.items()
        }
        for f, by_class in scores.items()
    }
    count, rate = count_mismatches(preds, golds, taxonomy)
    return EvalReport(
        dataset_id=taxonomy.dataset_id,
        per_finding=per_finding,
        macro_pos_f1=_or_none(macro_f1, preds, golds, taxonomy, int(MentionClass.POSITIVE)),
        macro_neg_f1=_or_none(macro_f1, preds, golds, taxonomy, int(MentionClass.NEGATIVE))
        if taxonomy.has_negative
        else None,
        weighted_f1=_or_none(weighted_f1, preds, golds, taxonomy),
        invalid_rate=invalid_rate(list(validity)) if validity else 0.0,
        n_reports=len(golds),
        mismatches=count,
        mismatch_rate=rate,
        meta={
            "weighting": "support over finding x mention-class cells, not-mentioned excluded",
            "macro": "mean over findings with defined F1; zero-support findings excluded",
        },
    )


# --- METEOR -----------------------------------------------------------------

_PUNCT = re.compile(r"([^\w\s])", re.UNICODE)

# Longest suffixes first within each language; applied once.
_SUFFIXES = {
    "en": ("ational", "ization", "fulness", "ousness", "iveness", "ations", "ments", "ness", "ment", "ings",
           "ing", "edly", "ies", "ied", "ed", "es", "ly", "s"),
    "es": ("amientos", "imientos", "amiento", "imiento", "aciones", "uciones", "ación", "ución", "mente",
           "idades", "idad", "ables", "ibles", "able", "ible", "ados", "idas", "idos", "adas", "ada", "ido",
           "ida", "ado", "es", "as", "os", "a", "o", "e", "s"),
    "fr": ("issements", "issement", "ations", "ation", "ements", "ement", "ments", "ment", "euses", "euse",
           "ités", "ité", "ives", "ive", "ées", "ée", "és", "es", "er", "é", "e", "s"),
    "da": ("erendes", "erende", "hedens", "heden", "elser", "elsen", "ernes", "erne", "ende", "ene", "ere",
           "hed", "en", "er", "et", "es", "e"),
}
_SUFFIXES["any"] = tuple(sorted({s for v in _SUFFIXES.values() for s in v}, key=len, reverse=True))


def tokenize(text: str) -> list[str]:
    """Lowercase, detach punctuation, split on whitespace."""
    text = unicodedata.normalize("NFC", text.lower())
    return _PUNCT.sub(r" \1 ", text).split()


def light_stem(token: str, language: str = "any") -> str:
    """Strip one common inflectional suffix, keeping a stem of at least three characters."""
    for suffix in _SUFFIXES.get(language, _SUFFIXES["any"]):
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            return token[: -len(suffix)]
    return token


def _match_stage(hyp, ref, hyp_used, ref_used, key) -> list[tuple[int, int]]:
    # Pair the k-th free occurrence of each key in the hypothesis with the
    # k-th free occurrence in the reference, which keeps pairs in order.
    free_ref: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        if j not in ref_used:
            free_ref.setdefault(key(tok), []).append(j)
    pairs = []
    for i, tok in enumerate(hyp):
        if i in hyp_used:
            continue
        slots = free_ref.get(key(tok))
        if slots:
            j = slots.pop(0)
            pairs.append((i, j))
            hyp_used.add(i)
            ref_used.add(j)
    return pairs


def align(hyp: Sequence[str], ref: Sequence[str], language: str = "any") -> list[tuple[int, int]]:
    """Unigram alignment: exact matches first, then stem matches among leftovers."""
    hyp_used: set[int] = set()
    ref_used: set[int] = set()
    pairs = _match_stage(hyp, ref, hyp_used, ref_used, lambda t: t)
    pairs += _match_stage(hyp, ref, hyp_used, ref_used, lambda t: light_stem(t, language))
    return sorted(pairs)


def count_chunks(pairs: Sequence[tuple[int, int]]) -> int:
    """Number of runs of pairs adjacent in both hypothesis and reference."""
    if not pairs:
        return 0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    return chunks


def meteor(hypothesis: str, reference: str, language: str = "any") -> float:
    """Sentence METEOR with exact and stemmed matching (no synonym stage)."""
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    if not hyp or not ref:
        return 0.0
    pairs = align(hyp, ref, language)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (count_chunks(pairs) / m) ** 3
    return fmean * (1 - penalty)


def mean_meteor(pairs: Sequence[tuple[str, str]], language: str = "any") -> float:
    if not pairs:
        raise MetricError("no hypothesis/reference pairs")
    return math.fsum(meteor(h, r, language) for h, r in pairs) / len(pairs)
