"""Recover and validate finding->code maps from free-form model output."""
from __future__ import annotations

import ast
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from radlabel.corpus import NOT_MENTIONED, TaxonomySpec, normalize_finding

if TYPE_CHECKING:
    from radlabel.backend import RawAnswer

MISSING_KEY_FILLED = "missing_key_filled"
UNKNOWN_KEY_DROPPED = "unknown_key_dropped"
STRING_VALUE_COERCED = "string_value_coerced"
VALUE_OUT_OF_RANGE = "value_out_of_range"


class ExtractionError(ValueError):
    pass


@dataclass
class ParsedPrediction:
    labels: dict[str, int]
    valid: bool
    repairs: list[str] = field(default_factory=list)
    raw: str = ""

    def to_dict(self) -> dict:
        return {"labels": self.labels, "valid": self.valid, "repairs": self.repairs}


def note(kind: str, key: str) -> str:
    return f"{kind}({key})"


def find_object_span(text: str) -> str:
    """Return the first balanced ``{...}`` substring, honouring quoted strings."""
    start = text.find("{")
    if start < 0:
        raise ExtractionError("no braced object in output")
    depth = 0
    quote = None
    escaped = False
    for pos in range(start, len(text)):
        ch = text[pos]
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in "\"'":
            quote = ch
        elif ch == "{":
            depth += 1
            if depth > 1:
                raise ExtractionError("nested objects are not accepted")
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : pos + 1]
    raise ExtractionError("unbalanced braces in output")


def extract_object(text: str) -> tuple[dict[str, int], list[str]]:
    """Parse the first flat object in ``text`` into a string->int map.

    Returns the map and the repair notes raised while coercing quoted
    integers. Keys may be single or double quoted and a trailing comma is
    tolerated; anything else that is not a flat literal map raises
    :class:`ExtractionError`.
    """
    span = find_object_span(text)
    try:
        obj = ast.literal_eval(span)
    except (ValueError, SyntaxError, MemoryError, RecursionError) as exc:
        raise ExtractionError(f"object is not a literal map: {exc}") from None
    if not isinstance(obj, dict):
        raise ExtractionError("braced span is not a map")
    out: dict[str, int] = {}
    notes: list[str] = []
    for key, value in obj.items():
        if not isinstance(key, str):
            raise ExtractionError(f"non-string key {key!r}")
        if isinstance(value, bool):
            raise ExtractionError(f"boolean value for {key!r}")
        if isinstance(value, int):
            out[key] = value
        elif isinstance(value, str):
            try:
                out[key] = int(value.strip())
            except ValueError:
                raise ExtractionError(f"unparseable value {value!r} for {key!r}") from None
            notes.append(note(STRING_VALUE_COERCED, key))
        else:
            raise ExtractionError(f"unparseable value {value!r} for {key!r}")
    return out, notes


def validate(
    mapping: Mapping[str, int], taxonomy: TaxonomySpec, notes: Iterable[str] = (), raw: str = ""
) -> ParsedPrediction:
    """Conform an extracted map to ``taxonomy``; never raises.

    Unknown keys are dropped and missing findings filled with -1, each with
    a repair note. Codes outside the taxonomy make the prediction invalid
    and are replaced by -1.
    """
    repairs = list(notes)
    known = set(taxonomy.findings)
    allowed = set(taxonomy.allowed_codes)
    seen: dict[str, int] = {}
    valid = True
    for key, value in mapping.items():
        finding = normalize_finding(key)
        if finding not in known:
            repairs.append(note(UNKNOWN_KEY_DROPPED, key))
            continue
        if value not in allowed:
            valid = False
            repairs.append(note(VALUE_OUT_OF_RANGE, key))
            value = NOT_MENTIONED
        seen[finding] = value
    labels = {}
    for finding in taxonomy.findings:
        if finding not in seen:
            repairs.append(note(MISSING_KEY_FILLED, finding))
        labels[finding] = seen.get(finding, NOT_MENTIONED)
    return ParsedPrediction(labels, valid, repairs, raw)


def invalid_prediction(taxonomy: TaxonomySpec, raw: str, reason: str) -> ParsedPrediction:
    return ParsedPrediction(taxonomy.empty_labels(), False, [reason], raw)


def parse_text(text: str, taxonomy: TaxonomySpec) -> ParsedPrediction:
    try:
        mapping, notes = extract_object(text)
    except ExtractionError as exc:
        return invalid_prediction(taxonomy, text, f"extraction_failed({exc})")
    return validate(mapping, taxonomy, notes, raw=text)


def parse_answer(raw: RawAnswer, taxonomy: TaxonomySpec) -> ParsedPrediction:
    """Total composition of extraction and validation for one backend answer."""
    if raw.finished_by != "stop":
        return invalid_prediction(taxonomy, raw.text, f"generation_{raw.finished_by}")
    return parse_text(raw.text, taxonomy)
