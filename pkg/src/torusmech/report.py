"""Deterministic CSV/JSON report files.

Each run writes into ``<outdir>/<subcommand>-<hash>`` where the hash is taken
over the canonical JSON of the run configuration, so the same configuration
always lands in the same place with byte-identical content (timing fields
aside).
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .homology import ScanRow


class ReportIOError(OSError):
    """Output could not be written; the message names the offending path."""


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_plain(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def config_hash(config: dict, length: int = 12) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:length]


class ReportWriter:
    """Writes the files of one run into a directory named from its config.

    The config itself (seed included) is written to ``config.json`` on creation.
    """

    def __init__(self, outdir, subcommand: str, config: dict):
        self.config = config
        self.directory = Path(outdir) / f"{subcommand}-{config_hash(config)}"
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ReportIOError(f"cannot create output directory {self.directory}: {exc.strerror or exc}") from exc
        self.files: list[Path] = []
        self.write_config()

    def path(self, name: str) -> Path:
        return self.directory / name

    def _write(self, name: str, text: str) -> Path:
        p = self.path(name)
        try:
            p.write_text(text)
        except OSError as exc:
            raise ReportIOError(f"cannot write {p}: {exc.strerror or exc}") from exc
        self.files.append(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self._write(name, canonical_json(obj))

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        p = self.path(name)
        try:
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_cell(v) for v in row])
        except OSError as exc:
            raise ReportIOError(f"cannot write {p}: {exc.strerror or exc}") from exc
        self.files.append(p)
        return p

    def write_config(self) -> Path:
        return self.write_json("config.json", self.config)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def resolution_label(resolution: Sequence[int]) -> str:
    res = [int(v) for v in resolution]
    return str(res[0]) if len(set(res)) == 1 else "x".join(str(v) for v in res)


def scan_header(n: int) -> list[str]:
    return (
        ["E"]
        + [f"beta_{d}" for d in range(n + 1)]
        + [f"cells_{d}" for d in range(n + 1)]
        + ["field", "resolution", "wall_ms"]
    )


def scan_rows(rows: Sequence[ScanRow]) -> list[list]:
    out = []
    for r in rows:
        out.append(
            [r.E, *r.betti.betti, *r.cells, r.field, resolution_label(r.resolution), round(r.wall_ms, 3)]
        )
    return out


def scan_json(rows: Sequence[ScanRow]) -> list[dict]:
    """Scan rows without timing, for the deterministic JSON summary."""
    return [
        {
            "E": r.E,
            "betti": list(r.betti.betti),
            "cells": list(r.cells),
            "field": r.field,
            "resolution": list(r.resolution),
            "euler_characteristic": r.betti.euler_characteristic,
        }
        for r in rows
    ]
