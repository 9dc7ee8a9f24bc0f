"""Run manifests and deterministic artifact serialization.

Every CLI run writes its outputs plus a manifest.json recording the resolved
config, the master seed, the derived seed roots, the code version, wall-clock
timestamps, and a sha256 digest per output file. The manifest itself is not
digested; timestamps are the only fields allowed to differ between two runs
of the same config, so byte-comparison of the listed outputs is the
reproducibility check.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

SCHEMA = "lfpp-manifest/1"
MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples for json.dump."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        # strict JSON has no NaN/Infinity literal
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def fmt_cell(v) -> str:
    """CSV cell formatting: shortest round-trip repr for floats."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer, bool, np.bool_)):
        return str(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    """RFC 4180: CRLF line endings, minimal quoting, UTF-8."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt_cell(v) for v in row])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(jsonable(obj), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    master_seed: int
    code_version: str
    started: str = field(default_factory=_utc_now)
    finished: str = ""
    derived_seeds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)    # file name -> sha256
    schema: str = SCHEMA

    def note_seed(self, tag: str, value: int) -> None:
        self.derived_seeds[tag] = value

    def finalize(self, outdir) -> str:
        """Digest every registered output and write manifest.json."""
        self.finished = _utc_now()
        for name in sorted(self.outputs):
            self.outputs[name] = sha256_file(outdir / name)
        path = outdir / MANIFEST_NAME
        write_json(path, {
            "schema": self.schema,
            "subcommand": self.subcommand,
            "config": jsonable(self.config),
            "master_seed": self.master_seed,
            "derived_seeds": self.derived_seeds,
            "code_version": self.code_version,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
        })
        return str(path)


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported manifest schema {doc.get('schema')!r}")
    return doc


def check_digests(manifest_path) -> list[str]:
    """Recompute output digests; return one message per problem (empty = ok)."""
    from pathlib import Path

    doc = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    problems = []
    for name, digest in sorted(doc["outputs"].items()):
        p = base / name
        if not p.exists():
            problems.append(f"missing output file: {name}")
            continue
        actual = sha256_file(p)
        if actual != digest:
            problems.append(f"digest mismatch: {name} (manifest {digest[:12]}, "
                            f"file {actual[:12]})")
    return problems
