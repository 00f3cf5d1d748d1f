"""Acceptance criteria, one test each, with their runtime limits.

Every test records a single PASS/FAIL line; the lines are printed together in
the terminal summary (see ``conftest.py``). Run on its own with::

    python3 -m pytest tests/test_acceptance.py
"""
import json
import random
import time
from contextlib import contextmanager

from conftest import ACCEPTANCE_RESULTS, CASIA_FINDINGS, CLASS_SETS, DATA, N, P, U, synthetic_multilabel
from oracles import macro_reference, weighted_reference
from radlabel.backend import GenerationParams, MockBackend, RawAnswer
from radlabel.cli import main
from radlabel.config import load_config
from radlabel.corpus import TaxonomySpec, load_dataset
from radlabel.extractor import parse_answer, validate
from radlabel.metrics import MetricError, count_mismatches, evaluate, macro_f1, meteor, weighted_f1
from radlabel.promptgen import PromptBundle, build_instruction, serialize_answer
from radlabel.splitter import stratified_split, subsample, write_manifest

from test_promptgen import CASIA_PROMPT


@contextmanager
def criterion(number, title, limit):
    start = time.perf_counter()
    status, detail = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - start
        detail = f"{elapsed:.2f}s, limit {limit}s"
        assert elapsed < limit, f"runtime {elapsed:.2f}s exceeds {limit}s"
        status = "PASS"
    except AssertionError as exc:
        detail = detail or str(exc).splitlines()[0][:120]
        raise
    finally:
        ACCEPTANCE_RESULTS.append(f"criterion {number:>2} {status}  {title} ({detail})")


def test_01_prompt_fidelity():
    with criterion(1, "CASIA instruction verbatim", 1):
        assert build_instruction(TaxonomySpec("casia", CASIA_FINDINGS)) == CASIA_PROMPT


def test_02_grammar_matrix():
    with criterion(2, "clause presence for all four class sets", 1):
        for classes in CLASS_SETS:
            text = build_instruction(TaxonomySpec("x", ("a", "b"), classes))
            has_n, has_u = N in classes, U in classes
            assert ("(2) the abnormality was negatively mentioned" in text) == has_n
            assert ("(0) the abnormality was either" in text) == has_u
            assert ("(1) the abnormality was positively mentioned in the report;" in text) == has_u
            assert ("(1) the abnormality was mentioned, even with uncertainty" in text) == (not has_u)
            assert text.endswith("(-1) the abnormality was not mentioned in the report.") == has_n
            assert ("or the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'." in text) == (
                not has_n
            )
            codes = ", ".join(str(c) for c in sorted([-1, *map(int, classes)]))
            assert f"The values can be one of [{codes}]." in text


def _or_none(fn, *args):
    try:
        return fn(*args)
    except MetricError:
        return None


def _close(got, ref):
    return (got is None and ref is None) or (got is not None and ref is not None and abs(got - ref) <= 1e-12)


def test_03_metric_oracle():
    rng = random.Random(2024)
    with criterion(3, "macro (+)F1/(-)F1 and (w)F1 match brute force on 1000 instances", 10):
        for _ in range(1000):
            classes = rng.choice(CLASS_SETS)
            tax = TaxonomySpec("t", tuple(f"f{i}" for i in range(rng.randint(1, 5))), classes)
            ids = [f"r{i}" for i in range(rng.randint(1, 10))]
            golds = {i: {f: rng.choice(tax.allowed_codes) for f in tax.findings} for i in ids}
            preds = {i: {f: rng.choice(tax.allowed_codes) for f in tax.findings} for i in ids}
            for cls in (1, 2):
                if cls in tax.allowed_codes:
                    assert _close(_or_none(macro_f1, preds, golds, tax, cls), macro_reference(preds, golds, tax.findings, cls))
            ref = weighted_reference(preds, golds, tax.findings, [int(c) for c in classes])
            assert _close(_or_none(weighted_f1, preds, golds, tax), ref)


def test_04_mismatch_rate():
    rng = random.Random(11)
    tax = TaxonomySpec("mimic", tuple(f"finding {i}" for i in range(14)), frozenset({P, N, U}))
    golds = {f"r{i}": {f: rng.choice(tax.allowed_codes) for f in tax.findings} for i in range(750)}
    preds = {i: dict(row) for i, row in golds.items()}
    cells = [(i, f) for i in golds for f in tax.findings]
    for i, f in rng.sample(cells, 684):
        preds[i][f] = rng.choice([c for c in tax.allowed_codes if c != golds[i][f]])
    with criterion(4, "684 of 750x14 cells differ -> rate 0.0651", 1):
        count, rate = count_mismatches(preds, golds, tax)
        assert count == 684
        assert abs(rate - 0.0651) <= 0.0001


DECORATIONS = [
    lambda s: f"```json\n{s}\n```",
    lambda s: f"Here is the classification:\n{s}",
    lambda s: f"{s}\nLet me know if you need anything else.",
    lambda s: s.replace('"', "'"),
]


def test_05_parser_robustness():
    rng = random.Random(5)
    words = ["pleural effusion", "pneumothorax", "mass", "lung opacity", "edema", "fracture", "support devices", "atelectasis"]
    with criterion(5, "1000 decorated serializations recovered; repairs flagged", 5):
        for _ in range(1000):
            tax = TaxonomySpec("t", tuple(rng.sample(words, rng.randint(1, len(words)))), rng.choice(CLASS_SETS))
            labels = {f: rng.choice(tax.allowed_codes) for f in tax.findings}
            text = serialize_answer(labels, tax)
            for deco in rng.sample(DECORATIONS, rng.randint(0, len(DECORATIONS))):
                text = deco(text)
            pred = parse_answer(RawAnswer(text, "stop"), tax)
            assert pred.labels == labels and pred.valid and pred.repairs == []
        tax = TaxonomySpec("t", ("pneumonia", "mass"), frozenset({P, N}))
        filled = validate({"pneumonia": 1}, tax)
        assert filled.labels == {"pneumonia": 1, "mass": -1} and filled.valid
        assert filled.repairs == ["missing_key_filled(mass)"]
        flagged = validate({"pneumonia": 0, "mass": 2}, tax)
        assert not flagged.valid and flagged.labels == {"pneumonia": -1, "mass": 2}


def test_06_split_quality(tmp_path):
    tax, data = synthetic_multilabel()
    with criterion(6, "train share within 0.70 +/- 0.05 per label; rerun byte-identical", 5):
        split = stratified_split(data, tax, (0.7, 0.1, 0.2), seed=42)
        for f in tax.findings:
            ids = [r.id for r in data if r.labels[f] != -1]
            share = sum(split.assignment[i] == "train" for i in ids) / len(ids)
            assert abs(share - 0.7) <= 0.05 + 1e-12, (f, share)
        write_manifest(tmp_path / "a.jsonl", split)
        write_manifest(tmp_path / "b.jsonl", stratified_split(data, tax, (0.7, 0.1, 0.2), seed=42))
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_07_subsample_anchors():
    tax, data = synthetic_multilabel(n=1600, supports=[40, 100, 250, 400, 800])
    with criterion(7, "1600 records -> 80 at 0.05, 480 at 0.30", 1):
        assert len(subsample(data, tax, 0.05, 42)) == 80
        assert len(subsample(data, tax, 0.30, 42)) == 480


def test_08_end_to_end(tmp_path):
    config = str(DATA / "e2e_config.yaml")
    common = ["--output-dir", str(tmp_path)]
    with criterion(8, "6-report mock run: invalid 1/6, report equals hand oracle", 5):
        assert main(["split", config, *common]) == 0
        assert main(["classify", config, *common]) == 0
        rows = [json.loads(l) for l in (tmp_path / "predictions_test_0shot.jsonl").read_text().splitlines()]
        assert len(rows) == 6 and sum(not r["valid"] for r in rows) == 1
        cfg = load_config(config)
        golds = {r.id: r.labels for r in load_dataset(cfg.dataset, cfg.taxonomy)}
        preds = {r["id"]: r["labels"] for r in rows}
        report = evaluate(preds, golds, cfg.taxonomy, [r["valid"] for r in rows])

        def cell(p, r, f, s):
            return {"precision": p, "recall": r, "f1": f, "support": s}

        assert report.per_finding == {
            "pneumonia": {"positive": cell(1.0, 1.0, 1.0, 3), "negative": cell(1.0, 1.0, 1.0, 1)},
            "pleural effusion": {"positive": cell(0.5, 0.5, 0.5, 2), "negative": cell(None, 0.0, 0.0, 1)},
            "pneumothorax": {"positive": cell(1.0, 1.0, 1.0, 1), "negative": cell(1.0, 1.0, 1.0, 2)},
        }
        assert report.macro_pos_f1 == 2.5 / 3
        assert report.macro_neg_f1 == 2 / 3
        assert report.weighted_f1 == 0.8
        assert report.invalid_rate == 1 / 6
        assert (report.mismatches, report.mismatch_rate) == (3, 3 / 18)
        assert report.n_reports == 6


def test_09_meteor_anchors():
    with criterion(9, "METEOR 4 tokens 0.9921875, 1 token 0.5, empty 0", 1):
        assert meteor("no acute cardiopulmonary process", "no acute cardiopulmonary process") == 0.9921875
        assert meteor("normal", "normal") == 0.5
        assert meteor("", "no acute cardiopulmonary process") == 0


def test_10_generation_contract():
    with criterion(10, "generation defaults, doubled budget, <= 64 in flight", 5):
        params = GenerationParams()
        assert (params.temperature, params.min_p, params.seed, params.stop) == (0.5, 0.1, 42, "}")
        assert params.token_budget(0) == 2048 and params.token_budget(3) == 4096
        mock = MockBackend(default='{"pneumonia": 1} trailing', delay=0.005)
        bundles = [PromptBundle("instruction", (), f"report {i}") for i in range(500)]
        answers = mock.complete_batch(bundles, params)
        assert len(answers) == 500 and all(a.text == '{"pneumonia": 1}' for a in answers)
        assert 1 < mock.max_seen_in_flight <= 64
