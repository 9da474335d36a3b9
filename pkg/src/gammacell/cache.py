"""Disk cache for cell-problem results, keyed by a content fingerprint.

Layout: ``<cache_dir>/<fingerprint-hex>/{field.bin, result.json}``. The
result record embeds the field sidecar, so an entry is exactly two files.
Writes go through a temp directory and an atomic rename; concurrent writers
of the same fingerprint are therefore safe (last one wins with identical
content).
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Optional

import hashlib

CACHE_SCHEMA = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(payload: dict) -> str:
    """Hex digest of the canonical JSON of a job description."""
    body = canonical_json({"schema": CACHE_SCHEMA, **payload})
    return hashlib.sha256(body.encode()).hexdigest()


def entry_dir(cache_dir: str, fp: str) -> str:
    return os.path.join(cache_dir, fp)


def load(cache_dir: Optional[str], fp: str) -> Optional[dict]:
    """Return the stored result record with the raw field bytes, or None."""
    if cache_dir is None:
        return None
    path = os.path.join(entry_dir(cache_dir, fp), "result.json")
    bin_path = os.path.join(entry_dir(cache_dir, fp), "field.bin")
    if not (os.path.exists(path) and os.path.exists(bin_path)):
        return None
    try:
        with open(path) as fh:
            record = json.load(fh)
        with open(bin_path, "rb") as fh:
            record["_field_bytes"] = fh.read()
    except (OSError, json.JSONDecodeError):
        return None
    return record


def store(cache_dir: Optional[str], fp: str, record: dict,
          field_bytes: bytes) -> None:
    if cache_dir is None:
        return
    os.makedirs(cache_dir, exist_ok=True)
    final = entry_dir(cache_dir, fp)
    tmp = tempfile.mkdtemp(prefix=f".{fp[:16]}-", dir=cache_dir)
    try:
        with open(os.path.join(tmp, "field.bin"), "wb") as fh:
            fh.write(field_bytes)
        with open(os.path.join(tmp, "result.json"), "w") as fh:
            json.dump(record, fh, sort_keys=True)
        try:
            os.replace(tmp, final)
        except OSError:
            # entry appeared concurrently; identical content, keep theirs
            for name in ("field.bin", "result.json"):
                p = os.path.join(tmp, name)
                if os.path.exists(p):
                    os.unlink(p)
            os.rmdir(tmp)
    except OSError:
        pass
