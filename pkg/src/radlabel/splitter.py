"""Multilabel iterative stratification for train/dev/test splits and subsamples."""
from __future__ import annotations

import json
import math
import random
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from radlabel.corpus import NOT_MENTIONED, AnnotatedReport, DatasetError, TaxonomySpec

SUBSETS = ("train", "dev", "test")


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, str]
    fractions: tuple[float, float, float]
    seed: int

    def ids(self, subset: str) -> list[str]:
        return [i for i, s in self.assignment.items() if s == subset]

    def sizes(self) -> dict[str, int]:
        return {s: len(self.ids(s)) for s in SUBSETS}


def _check_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be three nonnegative numbers, got {fractions!r}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    return tuple(float(f) for f in fractions)  # type: ignore[return-value]


def integer_sizes(fractions: Sequence[float], n: int) -> list[int]:
    """Largest-remainder rounding of ``fractions * n`` to integers summing to ``n``."""
    raw = [f * n for f in fractions]
    sizes = [math.floor(round(r, 9)) for r in raw]
    leftover = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda j: (-(raw[j] - sizes[j]), j))
    for j in order[:leftover]:
        sizes[j] += 1
    return sizes


def _argmax_ties(values: Sequence[float], candidates: Sequence[int]) -> list[int]:
    best = max(values[j] for j in candidates)
    return [j for j in candidates if values[j] == best]


def stratified_split(
    dataset: Sequence[AnnotatedReport],
    taxonomy: TaxonomySpec,
    fractions: Sequence[float],
    seed: int = 42,
    sizes: Sequence[int] | None = None,
) -> SplitAssignment:
    """Assign every report to train, dev or test by iterative stratification.

    The label with the fewest unassigned examples is processed first; each of
    its examples goes to the subset with the largest remaining demand for that
    label, then the largest remaining capacity, then a seeded random pick.
    Examples are visited in a seeded random order. Any mention (code other
    than -1) counts as a positive example. Reports without mentions are
    placed last by remaining capacity. A final pass swaps pairs of reports
    across subsets while that lowers the per-label share deviation.

    ``sizes`` overrides the rounded subset sizes with absolute counts.
    """
    fractions = _check_fractions(fractions)
    n = len(dataset)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    if sizes is None:
        capacity = integer_sizes(fractions, n)
    else:
        capacity = [int(s) for s in sizes]
        if len(capacity) != 3 or sum(capacity) != n or min(capacity) < 0:
            raise ValueError(f"sizes must be three nonnegative counts summing to {n}")
    initial = list(capacity)

    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    findings = taxonomy.findings
    positives = [
        [l for l, f in enumerate(findings) if rec.labels.get(f, NOT_MENTIONED) != NOT_MENTIONED] for rec in dataset
    ]
    label_totals = [0] * len(findings)
    for labs in positives:
        for l in labs:
            label_totals[l] += 1
    # remaining demand per subset and label, scaled by n to stay in integers
    demand = [[c * t for t in label_totals] for c in capacity]

    assigned: list[int | None] = [None] * n
    remaining = {i for i in range(n) if positives[i]}
    remaining_per_label = list(label_totals)

    def place(i: int, label: int | None) -> None:
        open_subsets = [j for j in range(3) if capacity[j] > 0]
        if label is not None:
            open_subsets = _argmax_ties([demand[j][label] for j in range(3)], open_subsets)
        ties = _argmax_ties(capacity, open_subsets)
        j = ties[0] if len(ties) == 1 else rng.choice(ties)
        assigned[i] = j
        capacity[j] -= 1
        for l in positives[i]:
            demand[j][l] -= n
            remaining_per_label[l] -= 1

    while remaining:
        live = [l for l in range(len(findings)) if remaining_per_label[l] > 0]
        fewest = min(remaining_per_label[l] for l in live)
        rarest = [l for l in live if remaining_per_label[l] == fewest]
        label = rarest[0] if len(rarest) == 1 else rng.choice(rarest)
        for i in order:
            if i in remaining and label in positives[i]:
                remaining.discard(i)
                place(i, label)

    for i in order:
        if assigned[i] is None:
            place(i, None)

    _refine(positives, assigned, label_totals, initial, rng)  # type: ignore[arg-type]

    return SplitAssignment(
        {rec.id: SUBSETS[assigned[i]] for i, rec in enumerate(dataset)},  # type: ignore[index]
        fractions,
        seed,
    )


def _refine(
    positives: list[list[int]],
    assigned: list[int],
    label_totals: list[int],
    sizes: list[int],
    rng: random.Random,
    max_rounds: int = 2000,
    max_candidates: int = 400,
) -> None:
    """Greedy pairwise swaps that reduce sum over (subset, label) of squared share error."""
    n = len(assigned)
    n_labels = len(label_totals)
    if n_labels == 0 or sum(1 for s in sizes if s > 0) < 2:
        return
    target = [[sizes[j] / n for _ in range(n_labels)] for j in range(3)]
    counts = [[0] * n_labels for _ in range(3)]
    members: list[list[int]] = [[] for _ in range(3)]
    for i, j in enumerate(assigned):
        members[j].append(i)
        for l in positives[i]:
            counts[j][l] += 1

    def err(j: int, l: int, c: int) -> float:
        return (c / label_totals[l] - target[j][l]) ** 2

    def swap_delta(a: int, b: int) -> float:
        ja, jb = assigned[a], assigned[b]
        change: dict[int, int] = {}
        for l in positives[a]:
            change[l] = change.get(l, 0) - 1
        for l in positives[b]:
            change[l] = change.get(l, 0) + 1
        delta = 0.0
        for l, d in change.items():
            if d:
                delta += err(ja, l, counts[ja][l] + d) - err(ja, l, counts[ja][l])
                delta += err(jb, l, counts[jb][l] - d) - err(jb, l, counts[jb][l])
        return delta

    for _ in range(max_rounds):
        worst, wj, wl = 0.0, -1, -1
        for j in range(3):
            for l in range(n_labels):
                if label_totals[l]:
                    e = err(j, l, counts[j][l])
                    if e > worst:
                        worst, wj, wl = e, j, l
        if wj < 0:
            return
        surplus = counts[wj][wl] / label_totals[wl] > target[wj][wl]
        inside = [i for i in members[wj] if (wl in positives[i]) == surplus]
        outside = [
            i for k in range(3) if k != wj for i in members[k] if (wl in positives[i]) != surplus
        ]
        if len(inside) > max_candidates:
            inside = rng.sample(inside, max_candidates)
        if len(outside) > max_candidates:
            outside = rng.sample(outside, max_candidates)
        best, pair = -1e-12, None
        for a in inside:
            for b in outside:
                d = swap_delta(a, b)
                if d < best:
                    best, pair = d, (a, b)
        if pair is None:
            return
        a, b = pair
        ja, jb = assigned[a], assigned[b]
        for l in positives[a]:
            counts[ja][l] -= 1
            counts[jb][l] += 1
        for l in positives[b]:
            counts[jb][l] -= 1
            counts[ja][l] += 1
        members[ja].remove(a)
        members[jb].remove(b)
        members[ja].append(b)
        members[jb].append(a)
        assigned[a], assigned[b] = jb, ja


def subsample(
    train: Sequence[AnnotatedReport], taxonomy: TaxonomySpec, fraction: float, seed: int = 42
) -> list[AnnotatedReport]:
    """Stratified subset of ``ceil(fraction * N)`` reports, kept in input order."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction!r}")
    n = len(train)
    keep = min(n, math.ceil(round(fraction * n, 9)))
    if keep == n:
        return list(train)
    split = stratified_split(train, taxonomy, (fraction, 1.0 - fraction, 0.0), seed, sizes=(keep, n - keep, 0))
    return [rec for rec in train if split.assignment[rec.id] == "train"]


def apply_split(dataset: Sequence[AnnotatedReport], split: SplitAssignment) -> dict[str, list[AnnotatedReport]]:
    parts: dict[str, list[AnnotatedReport]] = {s: [] for s in SUBSETS}
    for rec in dataset:
        try:
            parts[split.assignment[rec.id]].append(rec)
        except KeyError:
            raise DatasetError(f"report {rec.id!r} is not in the split manifest") from None
    if len(split.assignment) != len(dataset):
        raise DatasetError("split manifest and dataset contain different reports")
    return parts


def write_manifest(path: str | Path, split: SplitAssignment) -> None:
    """One header line with fractions and seed, then one ``{id, subset}`` line per report."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"fractions": list(split.fractions), "seed": split.seed}) + "\n")
        for rid, subset in split.assignment.items():
            fh.write(json.dumps({"id": rid, "subset": subset}) + "\n")


def read_manifest(path: str | Path) -> SplitAssignment:
    assignment: dict[str, str] = {}
    fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)
    seed = 0
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "fractions" in obj:
                fractions = tuple(obj["fractions"])  # type: ignore[assignment]
                seed = int(obj["seed"])
                continue
            if obj["subset"] not in SUBSETS:
                raise DatasetError(f"unknown subset {obj['subset']!r} in {path}")
            assignment[str(obj["id"])] = obj["subset"]
    return SplitAssignment(assignment, fractions, seed)
