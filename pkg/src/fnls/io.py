"""Run persistence: manifests, CSV tables, orbital dumps and re-verification."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ParseError
from .lattice import read_field, write_field
from .model import OrbitalSet

__all__ = ["RunManifest", "sha256_of", "format_value", "write_csv", "read_csv",
           "write_orbitals", "read_orbitals", "utc_now", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def format_value(v) -> str:
    """Deterministic text for a CSV cell; floats use the shortest round-trip repr."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> tuple[list, list]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_orbitals(outdir, state: OrbitalSet, prefix: str = "orbital") -> list[str]:
    """One binary dump per orbital; returns the file names."""
    names = []
    for i, f in enumerate(state.orbitals, start=1):
        name = f"{prefix}_{i:03d}.fld"
        write_field(Path(outdir) / name, f)
        names.append(name)
    return names


def read_orbitals(outdir, names, occupations) -> OrbitalSet:
    fields = [read_field(Path(outdir) / n) for n in names]
    return OrbitalSet.from_fields(fields, occupations)


@dataclass
class RunManifest:
    """Self-describing record of one CLI run.

    ``artifacts`` maps file names (relative to the run directory) to sha256
    digests; ``summaries`` holds one entry per executed operation.
    """

    command: str
    config: dict
    seed: int
    tool_version: str = __version__
    started: str = ""
    finished: str = ""
    exit_code: int = 0
    summaries: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def add_artifact(self, outdir, name: str) -> None:
        self.artifacts[name] = sha256_of(Path(outdir) / name)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ParseError(f"manifest: {exc}") from None

    def write(self, outdir) -> Path:
        path = Path(outdir) / MANIFEST_NAME
        path.write_text(self.to_json())
        return path

    @classmethod
    def read(cls, outdir) -> "RunManifest":
        return cls.from_json((Path(outdir) / MANIFEST_NAME).read_text())

    def checksum_mismatches(self, outdir) -> list[str]:
        """Artifacts whose current digest differs from the recorded one."""
        bad = []
        for name, digest in sorted(self.artifacts.items()):
            p = Path(outdir) / name
            if not p.exists() or sha256_of(p) != digest:
                bad.append(name)
        return bad

