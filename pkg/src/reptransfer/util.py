"""Seeding and deterministic file output helpers."""

from __future__ import annotations

import csv
import json
import os
from typing import Any, Iterable, Sequence

import numpy as np

# Stage tags keep independently-seeded generators decorrelated while staying
# reproducible from one master seed.
TAG_WORLD = 1
TAG_PRETRAIN_STREAM = 2
TAG_LOOP_STREAM = 3
TAG_MODEL = 4
TAG_DOWNSTREAM = 5
TAG_HARNESS = 6
TAG_EVAL_STREAM = 7
TAG_NOISE = 8


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    """Generator deterministically derived from a master seed and stage tags."""
    return np.random.default_rng([int(seed)] + [int(t) for t in tags])


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def dump_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)
        fp.write("\n")


def load_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fp:
        return json.load(fp)


def dump_jsonl(rows: Iterable[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        for row in rows:
            fp.write(json.dumps(row, sort_keys=True))
            fp.write("\n")


def dump_csv(rows: Sequence[dict], fieldnames: Sequence[str], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=list(fieldnames))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    return value
