"""Taxonomy-agnostic radiology report classification through chat-completion endpoints."""

from radlabel.corpus import (
    AnnotatedReport,
    MentionClass,
    Report,
    TaxonomySpec,
    filter_findings_by_support,
    load_dataset,
    map_certainty,
    top_k_findings,
)
from radlabel.extractor import ParsedPrediction, extract_object, parse_answer, validate
from radlabel.promptgen import PromptBundle, build_instruction, build_prompt, serialize_answer

__version__ = "0.1.0"

__all__ = [
    "AnnotatedReport",
    "MentionClass",
    "ParsedPrediction",
    "PromptBundle",
    "Report",
    "TaxonomySpec",
    "build_instruction",
    "build_prompt",
    "extract_object",
    "filter_findings_by_support",
    "load_dataset",
    "map_certainty",
    "parse_answer",
    "serialize_answer",
    "top_k_findings",
    "validate",
]
