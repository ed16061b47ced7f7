"""On-disk formats: atomic writes, CTE datasets (JSON lines with a header record), run configs."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

from .features import DATASET_VERSION, FEATURE_NAMES, SchemaMismatchError, check_feature_header
from .quality import CTE, NormalizationBounds

CTE_FORMAT = "cte-dataset"
CTE_VERSION = 1


class InvalidConfigError(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_ctes(path, ctes: Sequence[CTE], provenance: dict | None = None) -> None:
    header = {
        "format": CTE_FORMAT,
        "version": CTE_VERSION,
        "feature_version": DATASET_VERSION,
        "feature_names": list(FEATURE_NAMES),
        "count": len(ctes),
        "provenance": provenance or {},
    }
    lines = [dumps(header)] + [dumps(c.to_dict()) for c in ctes]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_header(path) -> dict:
    with open(path) as f:
        first = f.readline()
    if not first.strip():
        raise SchemaMismatchError(f"{path}: empty file")
    header = json.loads(first)
    if header.get("format") != CTE_FORMAT:
        raise SchemaMismatchError(f"{path}: not a CTE dataset")
    if header.get("version") != CTE_VERSION:
        raise SchemaMismatchError(f"{path}: unsupported dataset version {header.get('version')}")
    check_feature_header({"version": header.get("feature_version"), "feature_names": header.get("feature_names")}, str(path))
    return header


def read_ctes(path) -> tuple[dict, list[CTE]]:
    header = read_header(path)
    ctes = []
    with open(path) as f:
        next(f)
        for line in f:
            if line.strip():
                ctes.append(CTE.from_dict(json.loads(line)))
    if header.get("count", len(ctes)) != len(ctes):
        raise SchemaMismatchError(f"{path}: header says {header['count']} records, found {len(ctes)}")
    return header, ctes


def bounds_from_header(header: dict) -> NormalizationBounds | None:
    b = header.get("provenance", {}).get("bounds")
    return None if b is None else NormalizationBounds.from_dict(b)


BOUNDS_FORMAT = "cte-bounds"


def write_bounds(path, bounds: NormalizationBounds, meta: dict | None = None) -> None:
    atomic_write_text(path, dumps({"format": BOUNDS_FORMAT, "version": 1, "bounds": bounds.to_dict(), "meta": meta or {}}) + "\n")


def read_bounds(path) -> NormalizationBounds:
    d = json.loads(Path(path).read_text())
    if d.get("format") != BOUNDS_FORMAT or d.get("version") != 1:
        raise SchemaMismatchError(f"{path}: not a version-1 bounds file")
    return NormalizationBounds.from_dict(d["bounds"])


def load_config(path) -> dict:
    """A JSON run configuration; ``path=None`` gives an empty one."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InvalidConfigError(f"config file {p} does not exist")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InvalidConfigError(f"{p}: {e}") from e
    if not isinstance(cfg, dict):
        raise InvalidConfigError(f"{p}: top level must be an object")
    return cfg
