"""Blind human-grading sheets: export for annotators, ingest their grades.

A sheet is a CSV with one row per (query, system response).  System names
never appear in it; a separate key file maps each row's ``item`` id back to
its system.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ASPECTS = ("Fluency", "Relevance", "Informativeness", "Accuracy")
SHEET_COLUMNS = ("item", "query", "target_sf", "response") + ASPECTS
KEY_COLUMNS = ("item", "system")
MAX_GRADE = 5


class CoverageMismatch(ValueError):
    pass


class GradeValidationError(ValueError):
    pass


class MissingGrades(ValueError):
    def __init__(self, rows: list[str]):
        self.rows = rows
        super().__init__(f"missing grades in rows: {', '.join(rows)}")


@dataclass
class GradingSheet:
    rows: list[dict]
    key: dict[str, str]


def key_path_for(sheet_path: str | Path) -> Path:
    p = Path(sheet_path)
    return p.with_name(p.stem + ".key.csv")


def export_grading_sheet(queries: Sequence[tuple[str, str]], outputs: Mapping[str, Sequence[str]],
                         path: str | Path | None = None, seed: int = 0,
                         n_sample: int = 200) -> GradingSheet:
    """Sample up to ``n_sample`` queries and lay out every system's response.

    ``queries`` holds (query text, target function label) tuples and
    ``outputs`` maps system name to one response per query.  Query order,
    within-query system order and item ids are all drawn from ``seed``.
    """
    if not outputs:
        raise CoverageMismatch("at least one system is required")
    for name, resp in outputs.items():
        if len(resp) != len(queries):
            raise CoverageMismatch(f"system {name!r} answered {len(resp)} of {len(queries)} queries")
    rng = np.random.default_rng([seed, 303])
    picked = rng.permutation(len(queries))[:min(n_sample, len(queries))]
    systems = sorted(outputs)
    ids = rng.permutation(len(picked) * len(systems))
    rows, key = [], {}
    n = 0
    for qi in picked:
        q, target = queries[qi]
        for si in rng.permutation(len(systems)):
            item = f"r{ids[n]:05d}"
            n += 1
            rows.append({"item": item, "query": q, "target_sf": target,
                         "response": outputs[systems[si]][qi], **{a: "" for a in ASPECTS}})
            key[item] = systems[si]
    sheet = GradingSheet(rows, key)
    if path is not None:
        write_sheet(sheet, path)
    return sheet


def write_sheet(sheet: GradingSheet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SHEET_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(sheet.rows)
    with open(key_path_for(path), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEY_COLUMNS)
        for item in sorted(sheet.key):
            w.writerow([item, sheet.key[item]])


def _read_key(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["item"]: row["system"] for row in csv.DictReader(fh)}


def _parse_grade(value: str, item: str, aspect: str) -> int | None:
    value = (value or "").strip()
    if not value:
        return None
    try:
        g = int(value)
    except ValueError:
        raise GradeValidationError(f"row {item}: {aspect} grade {value!r} is not an integer") from None
    if not 0 <= g <= MAX_GRADE:
        raise GradeValidationError(f"row {item}: {aspect} grade {g} outside 0..{MAX_GRADE}")
    return g


def read_grades(sheet_path: str | Path, key: Mapping[str, str]) -> dict[str, dict[str, list[int]]]:
    """Grades per system per aspect from one completed sheet."""
    grades: dict[str, dict[str, list[int]]] = defaultdict(lambda: {a: [] for a in ASPECTS})
    missing = []
    with open(sheet_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SHEET_COLUMNS:
            raise GradeValidationError(f"{sheet_path}: header must be {','.join(SHEET_COLUMNS)}")
        for row in reader:
            item = row["item"]
            if item not in key:
                raise GradeValidationError(f"row {item}: not found in the key file")
            parsed = {a: _parse_grade(row[a], item, a) for a in ASPECTS}
            if any(v is None for v in parsed.values()):
                missing.append(item)
                continue
            for a, g in parsed.items():
                grades[key[item]][a].append(g)
    if missing:
        raise MissingGrades(missing)
    return grades


def ingest_grading_sheet(sheet_paths: str | Path | Sequence[str | Path],
                         key_path: str | Path | None = None) -> dict[str, dict[str, float]]:
    """Normalised scores (mean grade / 5) per system and aspect.

    With several sheets (one per annotator, same key) each sheet is
    normalised on its own and the results are averaged.
    """
    if isinstance(sheet_paths, (str, Path)):
        sheet_paths = [sheet_paths]
    key = _read_key(key_path or key_path_for(sheet_paths[0]))
    per_sheet = [read_grades(p, key) for p in sheet_paths]
    systems = sorted({s for g in per_sheet for s in g})
    out: dict[str, dict[str, float]] = {}
    for s in systems:
        out[s] = {}
        for a in ASPECTS:
            vals = [sum(g[s][a]) / len(g[s][a]) / MAX_GRADE for g in per_sheet if s in g and g[s][a]]
            out[s][a] = sum(vals) / len(vals) if vals else 0.0
    return out
