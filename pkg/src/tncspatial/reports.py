"""
File formats for pipeline outputs.

Every file carries ``{tool, version, config_hash, seed}``: JSON and GeoJSON
under a top-level ``meta`` member, CSV as a leading ``#`` comment line.
Writers are deterministic (sorted keys, fixed float formatting, ``\\n``
line endings) so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

from . import __version__

SCHEMA_VERSION = 1
TOOL = "tncspatial"


class StaleOutputError(RuntimeError):
    pass


def meta(config_hash: str, seed: int) -> dict:
    return {"tool": TOOL, "version": __version__, "config_hash": config_hash, "seed": seed, "schema_version": SCHEMA_VERSION}


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) or math.isinf(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return _clean(obj.item())
    return obj


def dumps_json(payload: dict, meta_block: dict) -> str:
    doc = {"meta": meta_block, **_clean(payload)}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float) or (hasattr(v, "dtype") and getattr(v.dtype, "kind", "") == "f"):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def meta_comment(meta_block: dict) -> str:
    return "# " + " ".join(f"{k}={meta_block[k]}" for k in sorted(meta_block)) + "\n"


def dumps_csv(header, rows, meta_block: dict) -> str:
    buf = io.StringIO()
    buf.write(meta_comment(meta_block))
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    for r in rows:
        out.writerow([fmt_cell(v) for v in r])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    """Rows of a CSV as dicts, skipping leading ``#`` comment lines."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        return list(csv.DictReader(lines))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Manifest:
    """``manifest.json`` in an output directory: per-file content hash and producing stage."""

    def __init__(self, outdir):
        self.outdir = Path(outdir)
        self.path = self.outdir / "manifest.json"
        if self.path.exists():
            doc = json.loads(self.path.read_text(encoding="utf-8"))
            self.files = doc.get("files", {})
        else:
            self.files = {}

    def write_file(self, name: str, text: str, stage: str, stage_hash: str) -> Path:
        p = self.outdir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        p.write_bytes(data)
        self.files[name] = {"sha256": hashlib.sha256(data).hexdigest(), "stage": stage, "stage_hash": stage_hash}
        return p

    def drop_stage(self, stage: str) -> None:
        self.files = {k: v for k, v in self.files.items() if v["stage"] != stage}

    def save(self, meta_block: dict) -> None:
        doc = {"meta": meta_block, "files": dict(sorted(self.files.items()))}
        self.path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def verify(self, name: str, stage_hash: str | None = None) -> Path:
        """Path of a prior output after checking its hash and the stage configuration that produced it."""
        entry = self.files.get(name)
        p = self.outdir / name
        if entry is None or not p.exists():
            raise StaleOutputError(f"{name} not found in {self.outdir}; run the producing stage first")
        if sha256_file(p) != entry["sha256"]:
            raise StaleOutputError(f"{name} changed since it was written (content hash mismatch)")
        if stage_hash is not None and entry["stage_hash"] != stage_hash:
            raise StaleOutputError(f"{name} was produced with a different {entry['stage']} configuration; rerun that stage")
        return p

    def has(self, name: str, stage_hash: str) -> bool:
        try:
            self.verify(name, stage_hash)
        except StaleOutputError:
            return False
        return True
