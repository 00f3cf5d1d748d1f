"""Translation-based augmentation of annotated report sets."""
from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

from radlabel.backend import Backend, GenerationParams, RawAnswer
from radlabel.corpus import AnnotatedReport, DatasetError, Report
from radlabel.metrics import MetricError, mean_meteor
from radlabel.promptgen import translation_bundle

logger = logging.getLogger(__name__)

LANGUAGE_NAMES = {"en": "English", "es": "Spanish", "fr": "French", "da": "Danish"}
LANGUAGE_TAGS = {name.lower(): tag for tag, name in LANGUAGE_NAMES.items()}


def language_tag(language: str) -> str:
    key = language.strip().lower()
    if key in LANGUAGE_NAMES:
        return key
    if key in LANGUAGE_TAGS:
        return LANGUAGE_TAGS[key]
    raise ValueError(f"unsupported language {language!r}")


@dataclass
class TranslationRecord:
    source_id: str
    source_lang: str
    target_lang: str
    translated_text: str
    labels: dict[str, int] = field(default_factory=dict)
    kept: bool = True
    meteor_vs_reference: float | None = None
    n_tokens: int = 0
    identity_direction: bool = False


def estimate_tokens(text: str, reported: int | None = None) -> int:
    """Token count reported by the endpoint, else a characters/4 estimate."""
    if reported is not None:
        return int(reported)
    return math.ceil(len(text) / 4)


def _record_from_answer(report: AnnotatedReport, target: str, answer: RawAnswer) -> TranslationRecord | None:
    text = answer.text.strip()
    if answer.finished_by == "error" or not text:
        logger.error("translation of %s to %s failed: %s", report.id, target, answer.error or "empty response")
        return None
    return TranslationRecord(
        source_id=report.id,
        source_lang=report.report.language,
        target_lang=target,
        translated_text=text,
        labels=dict(report.labels),
        n_tokens=estimate_tokens(text, answer.completion_tokens),
        identity_direction=report.report.language == target,
    )


def translate(
    report: AnnotatedReport, target_lang: str, backend: Backend, params: GenerationParams | None = None
) -> TranslationRecord | None:
    """Translate one report, carrying its labels over. Returns ``None`` on failure."""
    return translate_many([report], target_lang, backend, params)[0]


def translate_many(
    reports: Sequence[AnnotatedReport],
    target_lang: str,
    backend: Backend,
    params: GenerationParams | None = None,
    max_in_flight: int = 64,
) -> list[TranslationRecord | None]:
    target = language_tag(target_lang)
    params = (params or GenerationParams()).without_stop()
    bundles = [translation_bundle(r.text, LANGUAGE_NAMES[target]) for r in reports]
    answers = backend.complete_batch(bundles, params, max_in_flight=max_in_flight)
    return [_record_from_answer(r, target, a) for r, a in zip(reports, answers)]


def length_filter(
    records: Sequence[TranslationRecord], max_tokens: int
) -> tuple[list[TranslationRecord], list[TranslationRecord]]:
    """Split translations into those within ``max_tokens`` and those over it."""
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    kept, dropped = [], []
    for rec in records:
        rec.kept = rec.n_tokens <= max_tokens
        (kept if rec.kept else dropped).append(rec)
    return kept, dropped


def translated_id(source_id: str, target_lang: str) -> str:
    return f"{source_id}__{target_lang}"


def build_augmented_set(
    original: Sequence[AnnotatedReport], translations: Sequence[TranslationRecord], mode: str
) -> list[AnnotatedReport]:
    """Assemble a training set from kept translations, alone or with the originals."""
    if mode not in ("translated_only", "union"):
        raise ValueError(f"unknown mode {mode!r}")
    sources = {r.id: r for r in original}
    translated = []
    for rec in translations:
        if not rec.kept:
            continue
        src = sources.get(rec.source_id)
        source_name = src.report.source if src else ""
        report = Report(translated_id(rec.source_id, rec.target_lang), rec.target_lang, rec.translated_text, source_name)
        translated.append(AnnotatedReport(report, dict(rec.labels)))
    out = translated if mode == "translated_only" else [*original, *translated]
    if not out:
        raise DatasetError("augmented set is empty")
    seen: set[str] = set()
    for rec in out:
        if rec.id in seen:
            raise DatasetError(f"duplicate id {rec.id!r} in augmented set")
        seen.add(rec.id)
    return out


def score_backtranslation(
    pairs: Sequence[tuple[str, str]],
    target_lang: str,
    backend: Backend,
    params: GenerationParams | None = None,
) -> float:
    """Translate each source text and return the mean METEOR against its reference."""
    if not pairs:
        raise MetricError("empty corpus")
    target = language_tag(target_lang)
    params = (params or GenerationParams()).without_stop()
    bundles = [translation_bundle(src, LANGUAGE_NAMES[target]) for src, _ in pairs]
    answers = backend.complete_batch(bundles, params)
    scored = [(a.text if a.finished_by != "error" else "", ref) for a, (_, ref) in zip(answers, pairs)]
    return mean_meteor(scored, target)

