"""The single simulation event loop that owns the node, platforms and gateway.

Per tick, in this order: one consensus tick; durability monitor; oracle
cycle (when enabled); platform timers and queued invocations (FIFO per
platform, repeated until every queue is empty); actions scheduled for the
tick; registered periodic tasks. A transaction submitted during tick ``t``
is therefore included no earlier than tick ``t + 1``.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Callable

from .faas import FunctionSpec, Platform
from .gateway import Gateway
from .identity import Registry
from .ledger import ChainConfig, Node
from .trace import Trace

POLLER_FUNCTION = "__poller__"


class Simulation:
    def __init__(self, config: ChainConfig | None = None, *, oracle: bool = False,
                 gateway_options: dict | None = None):
        self.now = 0
        self.trace = Trace(lambda: self.now)
        self.registry = Registry()
        self.node = Node(config or ChainConfig(), self.registry, self.trace)
        self.platforms: dict[str, Platform] = {}
        self.gateway = Gateway(self.node, self.platforms, trace=self.trace,
                               **(gateway_options or {}))
        self.oracle_enabled = oracle
        self._actions: dict[int, list[Callable[[], None]]] = defaultdict(list)
        self._tasks: list[tuple[str, int, Callable[[], None]]] = []

    def add_platform(self, platform_id: str) -> Platform:
        if platform_id in self.platforms:
            raise ValueError(f"platform {platform_id} already exists")
        p = Platform(platform_id, self.trace)
        p.services["gateway"] = self.gateway
        self.platforms[platform_id] = p
        return p

    def add_poller(self, platform_id: str, period: int | None = None, price: int = 1) -> str:
        """Pull loop realised as a timer-triggered function that runs ``poll_cycle``."""
        platform = self.platforms[platform_id]
        gateway = self.gateway

        def poller(payload, ctx):
            return {"delivered": gateway.poll_cycle()}

        platform.register_function(FunctionSpec(POLLER_FUNCTION, poller, max_duration=1,
                                                price_per_invocation=price))
        return platform.schedule_timer(POLLER_FUNCTION, period or gateway.poll_interval)

    def at(self, tick: int, action: Callable[[], None]) -> None:
        if tick <= self.now:
            raise ValueError("cannot schedule in the past")
        self._actions[tick].append(action)

    def every(self, name: str, task: Callable[[], None], period: int = 1) -> None:
        self._tasks.append((name, period, task))

    def _drain_platforms(self) -> None:
        busy = True
        while busy:
            busy = False
            for p in self.platforms.values():
                if p.queue:
                    p.drain(self.now)
                    busy = True

    def step(self) -> None:
        self.now += 1
        self.node.consensus_tick()
        self.gateway.monitor_durability()
        if self.oracle_enabled:
            self.gateway.oracle_cycle()
        for p in self.platforms.values():
            p.fire_timers(self.now)
        self._drain_platforms()
        for action in self._actions.pop(self.now, []):
            action()
        for _name, period, task in self._tasks:
            if self.now % period == 0:
                task()
        self._drain_platforms()

    def run(self, ticks: int) -> None:
        for _ in range(ticks):
            self.step()

    def run_until(self, predicate: Callable[[], bool], max_ticks: int = 1000) -> bool:
        for _ in range(max_ticks):
            if predicate():
                return True
            self.step()
        return predicate()
