from __future__ import annotations

import random
from pathlib import Path

import pytest

from radlabel.corpus import AnnotatedReport, MentionClass, Report, TaxonomySpec

DATA = Path(__file__).parent / "data"

P, N, U = MentionClass.POSITIVE, MentionClass.NEGATIVE, MentionClass.UNCERTAIN
CLASS_SETS = [frozenset({P}), frozenset({P, N}), frozenset({P, U}), frozenset({P, N, U})]

CASIA_FINDINGS = ("cardiomegaly", "mass", "pleural effusion", "pneumonia", "pneumothorax")


def make_reports(rows, taxonomy: TaxonomySpec, language: str = "en") -> list[AnnotatedReport]:
    """``rows`` is a list of partial label dicts; unlisted findings are -1."""
    out = []
    for i, partial in enumerate(rows):
        labels = taxonomy.empty_labels()
        labels.update(partial)
        out.append(AnnotatedReport(Report(f"r{i}", language, f"report number {i}", taxonomy.dataset_id), labels))
    return out


def synthetic_multilabel(n: int = 200, supports=None, seed: int = 0):
    """Reports with fixed per-label supports placed at random."""
    supports = supports or [10, 23, 36, 49, 61, 74, 87, 100]
    findings = tuple(f"finding{i}" for i in range(len(supports)))
    taxonomy = TaxonomySpec("synthetic", findings)
    rng = random.Random(seed)
    rows = [dict() for _ in range(n)]
    for f, s in zip(findings, supports):
        for i in rng.sample(range(n), s):
            rows[i][f] = 1
    return taxonomy, make_reports(rows, taxonomy)


@pytest.fixture
def casia() -> TaxonomySpec:
    return TaxonomySpec("casia", CASIA_FINDINGS)


@pytest.fixture
def e2e_taxonomy() -> TaxonomySpec:
    return TaxonomySpec("e2e", ("pneumonia", "pleural effusion", "pneumothorax"), frozenset({P, N}))


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)
