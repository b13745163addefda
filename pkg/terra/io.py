"""
Artifact I/O: CSV tables with JSON sidecar manifests.

Floats are written with 17 significant digits so every table round-trips
bit-exactly, and regenerating an artifact from the same seed yields the same
bytes.
"""

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(artifact: Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(f"{artifact.stem}.manifest.json")


def write_table(df: pd.DataFrame, path: Path, float_format: str = FLOAT_FORMAT) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path


def read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_manifest(artifact: Path, payload: Dict[str, Any]) -> Path:
    """Write the sidecar manifest of an artifact, stamping its content hash."""
    artifact = Path(artifact)
    record = dict(payload)
    record["artifact"] = artifact.name
    record["sha256"] = sha256_file(artifact)
    record.setdefault("written_at", datetime.now(timezone.utc).isoformat())
    target = manifest_path(artifact)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, default=str)
    return target


def read_manifest(artifact: Path) -> Dict[str, Any]:
    target = manifest_path(artifact)
    if not target.exists():
        return {}
    with open(target, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json(payload: Dict[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=str)
    return path
