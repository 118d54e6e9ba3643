"""The requirement matrix: which platform requirements each scenario needs.

The matrix itself lives in ``data/requirement_matrix.json`` so it can be diffed against
the reference matrix cell by cell. Each cell is a list of note tags; an
empty list means an unconditional check mark, an absent cell means the
requirement does not affect the scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources


class ScenarioId(str, Enum):
    S1_EventEmitter = "S1_EventEmitter"
    S2_ContractAsFunction = "S2_ContractAsFunction"
    S3a_OrchSteps = "S3a_OrchSteps"
    S3b_OnChainEngine = "S3b_OnChainEngine"
    S4_MessageBus = "S4_MessageBus"
    S4_ProcessManager = "S4_ProcessManager"


REQUIREMENT_IDS = ("A1", "A2", "A3", "A4", "B1", "B2", "B3", "B4", "C1", "C2")


@dataclass(frozen=True)
class Requirement:
    id: str
    kind: str  # functional | non-functional
    title: str
    group: str


@dataclass(frozen=True)
class Capability:
    requirement: str
    notes: tuple[int, ...] = ()

    @property
    def conditional(self) -> bool:
        return bool(self.notes)

    def label(self, note_text: dict[int, str] | None = None) -> str:
        if not self.notes:
            return self.requirement
        if note_text:
            return f"{self.requirement}[{'; '.join(note_text[n] for n in self.notes)}]"
        return self.requirement + "".join(f"({n})" for n in self.notes)


@lru_cache(maxsize=1)
def load_table() -> dict:
    text = resources.files("chainfaas.scenario_kit").joinpath("data/requirement_matrix.json").read_text(
        encoding="utf-8")
    return json.loads(text)


def requirements() -> dict[str, Requirement]:
    table = load_table()["requirements"]
    return {rid: Requirement(rid, table[rid]["kind"], table[rid]["title"], table[rid]["group"])
            for rid in REQUIREMENT_IDS}


def note_text() -> dict[int, str]:
    return {int(k): v for k, v in load_table()["notes"].items()}


def scenario_id(value: str | ScenarioId) -> ScenarioId:
    try:
        return ScenarioId(value)
    except ValueError:
        raise ValueError(f"unknown scenario {value!r}; expected one of "
                         f"{[s.value for s in ScenarioId]}") from None


def required_capabilities(scenario: str | ScenarioId) -> frozenset[Capability]:
    sid = scenario_id(scenario).value
    cells = load_table()["cells"]
    return frozenset(
        Capability(rid, tuple(cells[rid][sid]))
        for rid in REQUIREMENT_IDS if sid in cells.get(rid, {})
    )


def matrix_rows(scenario: str | ScenarioId) -> list[dict]:
    """One row per requirement (in table order) for a scenario column."""
    caps = {c.requirement: c for c in required_capabilities(scenario)}
    reqs = requirements()
    rows = []
    for rid in REQUIREMENT_IDS:
        c = caps.get(rid)
        rows.append({"requirement": rid, "title": reqs[rid].title, "required": c is not None,
                     "notes": list(c.notes) if c else []})
    return rows


def format_matrix(scenario: str | ScenarioId) -> str:
    notes = note_text()
    lines = [f"# {scenario_id(scenario).value}"]
    for row in matrix_rows(scenario):
        mark = "x" if row["required"] else "-"
        tags = "".join(f"({n})" for n in row["notes"])
        lines.append(f"{row['requirement']}\t{mark}{tags}\t{row['title']}")
    used = sorted({n for r in matrix_rows(scenario) for n in r["notes"]})
    for n in used:
        lines.append(f"({n}) {notes[n]}")
    return "\n".join(lines)
