"""Dataset manifests: one CSV row per image.

Header is exactly `subject_id,age,split,path`; paths are relative to the
manifest's directory. Malformed input is rejected on the first error with its
1-based line number (the header is line 1), never repaired.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError

HEADER = ["subject_id", "age", "split", "path"]
SPLITS = ("train", "test", "finetune")


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: int
    age: int
    split: str
    path: str


def _parse_int(value: str, column: str, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ManifestError(
            f"line {line}: column '{column}' must be an integer, got {value!r}"
        ) from None


def read_manifest(path, check_paths: bool = True) -> list[SubjectRecord]:
    """Parse and validate a manifest; optionally verify image paths resolve."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise ManifestError("line 1: empty manifest, expected header "
                            + ",".join(HEADER))
    if rows[0] != HEADER:
        raise ManifestError(
            f"line 1: bad header {','.join(rows[0])!r}, expected "
            f"{','.join(HEADER)!r}"
        )
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(HEADER):
            raise ManifestError(
                f"line {i}: expected {len(HEADER)} columns, got {len(row)}"
            )
        sid = _parse_int(row[0], "subject_id", i)
        if sid < 0:
            raise ManifestError(f"line {i}: subject_id must be >= 0, got {sid}")
        age = _parse_int(row[1], "age", i)
        if age < 0:
            raise ManifestError(f"line {i}: age must be >= 0, got {age}")
        split = row[2]
        if split not in SPLITS:
            raise ManifestError(
                f"line {i}: split must be one of {list(SPLITS)}, got {split!r}"
            )
        rel = row[3]
        if not rel:
            raise ManifestError(f"line {i}: path must be non-empty")
        if check_paths and not (base / rel).exists():
            raise ManifestError(f"line {i}: path does not resolve: {base / rel}")
        records.append(SubjectRecord(sid, age, split, rel))
    return records


def write_manifest(path, records) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HEADER)
        for r in records:
            writer.writerow([r.subject_id, r.age, r.split, r.path])
