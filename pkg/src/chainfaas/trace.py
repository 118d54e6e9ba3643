"""JSON Lines trace of a simulation run.

Every record is ``{"tick", "kind", "module", "detail"}``; records are written in
canonical JSON so two runs with equal inputs produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable

from .canonical import canonical_text


class Trace:
    def __init__(self, now: Callable[[], int] | None = None):
        self.now = now or (lambda: 0)
        self.records: list[dict] = []

    def emit(self, kind: str, module: str, detail: dict) -> None:
        self.records.append({"tick": self.now(), "kind": kind, "module": module,
                             "detail": detail})

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def lines(self) -> Iterable[str]:
        for r in self.records:
            yield canonical_text(r)

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def read_trace(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def emit(trace: Trace | None, kind: str, module: str, detail: dict) -> None:
    if trace is not None:
        trace.emit(kind, module, detail)
