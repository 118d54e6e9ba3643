"""Simulated FaaS platform: function registry, triggers, timeouts and billing.

Handlers are host procedures ``handler(payload, ctx) -> dict``. Each invocation
gets a fresh :class:`InvocationContext`; simulated execution time is consumed
with ``ctx.sleep(n)`` and an invocation that would exceed ``max_duration`` is
aborted before the handler observes the extra ticks.

Billing is flat per invocation and charged once per attempt, including
attempts aborted by the timeout. Registration and idle time cost nothing.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .canonical import canonical_text
from .errors import DuplicateFunction, Timeout, UnknownFunction
from .trace import Trace, emit

log = logging.getLogger(__name__)

Handler = Callable[[dict, "InvocationContext"], dict]


@dataclass
class FunctionSpec:
    function_id: str
    handler: Handler
    max_duration: int = 10
    price_per_invocation: int = 1
    platform_id: str = ""

    def __post_init__(self):
        if self.max_duration < 1:
            raise ValueError("max_duration must be >= 1")


@dataclass
class BillingRecord:
    platform_id: str
    function_id: str
    invocations: int
    cost: int
    window: tuple[int, int]

    def to_dict(self) -> dict:
        return {"platform_id": self.platform_id, "function_id": self.function_id,
                "invocations": self.invocations, "cost": self.cost,
                "window": list(self.window)}


@dataclass
class Invocation:
    """Handle for an asynchronous invocation queued on a platform."""

    invocation_id: str
    function_id: str
    payload: dict
    enqueued_tick: int
    status: str = "Queued"  # Queued | Succeeded | TimedOut | Failed
    result: dict | None = None
    error: str | None = None
    tick: int | None = None


class _Abort(Exception):
    pass


class InvocationContext:
    def __init__(self, platform: "Platform", spec: FunctionSpec, tick: int):
        self.platform = platform
        self.platform_id = platform.platform_id
        self.function_id = spec.function_id
        self.tick = tick
        self.max_duration = spec.max_duration
        self.elapsed = 0
        self.local: dict[str, Any] = {}
        self.services = platform.services

    def sleep(self, ticks: int) -> None:
        if self.elapsed + ticks > self.max_duration:
            raise _Abort()
        self.elapsed += ticks


@dataclass
class _Timer:
    timer_id: str
    function_id: str
    period: int
    start_tick: int
    active: bool = True


class Platform:
    def __init__(self, platform_id: str, trace: Trace | None = None):
        self.platform_id = platform_id
        self.trace = trace
        self.tick = 0
        self.functions: dict[str, FunctionSpec] = {}
        self.timers: dict[str, _Timer] = {}
        self.queue: deque[Invocation] = deque()
        self.invocations: list[Invocation] = []
        # (tick, function_id, status) per billed attempt
        self.billing_log: list[tuple[int, str, str]] = []
        # shared host services handed to handlers (e.g. a gateway); never secret keys
        self.services: dict[str, Any] = {}
        self._seq = 0

    def register_function(self, spec: FunctionSpec) -> str:
        if spec.function_id in self.functions:
            raise DuplicateFunction(f"{self.platform_id}/{spec.function_id}")
        spec.platform_id = self.platform_id
        self.functions[spec.function_id] = spec
        return spec.function_id

    def has_function(self, function_id: str) -> bool:
        return function_id in self.functions

    def _next_id(self, prefix: str) -> str:
        self._seq += 1
        return f"{self.platform_id}:{prefix}:{self._seq}"

    def _run(self, spec: FunctionSpec, payload: dict) -> tuple[str, dict | None, str | None]:
        ctx = InvocationContext(self, spec, self.tick)
        try:
            result = spec.handler(dict(payload), ctx)
            status, error = "Succeeded", None
        except _Abort:
            result, status, error = None, "TimedOut", f"exceeded {spec.max_duration} ticks"
        except Exception as exc:  # handler bugs become failed invocations
            result, status, error = None, "Failed", f"{type(exc).__name__}: {exc}"
        self.billing_log.append((self.tick, spec.function_id, status))
        emit(self.trace, "invocation", "faas_runtime", {
            "platform": self.platform_id, "function": spec.function_id,
            "payload": payload, "status": status, "result": result, "error": error,
        })
        return status, result, error

    def invoke_function(self, function_id: str, payload: dict, mode: str = "sync"):
        spec = self.functions.get(function_id)
        if spec is None:
            raise UnknownFunction(f"{self.platform_id}/{function_id}")
        if mode == "async":
            inv = Invocation(self._next_id("inv"), function_id, dict(payload), self.tick)
            self.queue.append(inv)
            self.invocations.append(inv)
            return inv
        if mode != "sync":
            raise ValueError(f"unknown mode {mode!r}")
        status, result, error = self._run(spec, payload)
        if status == "TimedOut":
            raise Timeout(f"{function_id}: {error}")
        if status == "Failed":
            raise RuntimeError(f"{function_id}: {error}")
        return result

    def schedule_timer(self, function_id: str, period: int) -> str:
        if function_id not in self.functions:
            raise UnknownFunction(f"{self.platform_id}/{function_id}")
        if period < 1:
            raise ValueError("period must be >= 1")
        timer_id = self._next_id("timer")
        self.timers[timer_id] = _Timer(timer_id, function_id, period, self.tick)
        return timer_id

    def cancel_timer(self, timer_id: str) -> None:
        self.timers[timer_id].active = False

    def fire_timers(self, tick: int) -> None:
        self.tick = tick
        for t in self.timers.values():
            if t.active and tick > t.start_tick and (tick - t.start_tick) % t.period == 0:
                self.invoke_function(t.function_id, {"tick": tick}, mode="async")

    def drain(self, tick: int | None = None) -> int:
        """Run queued async invocations in FIFO order, including ones they enqueue."""
        if tick is not None:
            self.tick = tick
        n = 0
        while self.queue:
            inv = self.queue.popleft()
            status, result, error = self._run(self.functions[inv.function_id], inv.payload)
            inv.status, inv.result, inv.error, inv.tick = status, result, error, self.tick
            n += 1
        return n

    def advance(self, tick: int) -> int:
        self.fire_timers(tick)
        return self.drain(tick)

    def billing_report(self, window: tuple[int, int]) -> list[BillingRecord]:
        lo, hi = window
        if lo > hi:
            raise ValueError("window start after end")
        counts = {fid: 0 for fid in self.functions}
        for tick, fid, _status in self.billing_log:
            if lo <= tick <= hi:
                counts[fid] += 1
        return [
            BillingRecord(self.platform_id, fid, n, n * self.functions[fid].price_per_invocation,
                          (lo, hi))
            for fid, n in counts.items()
        ]


def export_billing(records: list[BillingRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(canonical_text(r.to_dict()) + "\n")


def read_billing(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# module-level aliases matching the operation names
def register_function(platform: Platform, spec: FunctionSpec) -> str:
    return platform.register_function(spec)


def invoke_function(platform: Platform, function_id: str, payload: dict, mode: str = "sync"):
    return platform.invoke_function(function_id, payload, mode)


def schedule_timer(platform: Platform, function_id: str, period: int) -> str:
    return platform.schedule_timer(function_id, period)


def billing_report(platform: Platform, window: tuple[int, int]) -> list[BillingRecord]:
    return platform.billing_report(window)
