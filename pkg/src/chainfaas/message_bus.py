"""Accountable message bus between serverless platforms.

Platforms never talk to each other directly. A source platform publishes a
signed transaction to the bus contract; the contract emits one ``Integration``
event per publish, and each target platform's router picks up the events
addressed to it from the event log once they are sufficiently confirmed.

The bus payload travels as canonical JSON text so that the delivered payload
is byte-equal to the published one.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .canonical import canonical_bytes, canonical_text
from .chaintypes import EventKind
from .contract_vm import (ContractDefinition, arg, command, deploy_contract, emit, function, lit,
                          sender)
from .errors import PayloadTooLarge
from .faas import Platform
from .gateway import EventCursor, Gateway, InvocationHandle, Mode
from .ledger import EventFilter
from .trace import emit as trace_emit

log = logging.getLogger(__name__)

DEFAULT_PAYLOAD_CAP = 4096
BUS_EVENT = "BusMessage"


def bus_definition() -> ContractDefinition:
    """publish(source_platform, target_platform, target_function, payload_json)."""
    body = command(lit(True), emit(EventKind.INTEGRATION, BUS_EVENT, {
        "sender": sender(),
        "source_platform": arg(0),
        "target_platform": arg(1),
        "target_function": arg(2),
        "payload": arg(3),
    }))
    return ContractDefinition.from_document({
        "functions": [function("publish", ["str", "str", "str", "str"], body)],
    })


def deploy_bus(node, deployer) -> str:
    return deploy_contract(node, bus_definition(), deployer)


@dataclass(frozen=True)
class Target:
    platform_id: str
    function_id: str


def publish(gateway: Gateway, account, bus_address: str, target: Target | tuple,
            payload: dict, max_fee: int = 100, source_platform: str = "",
            cap: int = DEFAULT_PAYLOAD_CAP, mode: Mode | None = None) -> InvocationHandle:
    if not isinstance(target, Target):
        target = Target(*target)
    size = len(canonical_bytes(payload))
    if size > cap:
        raise PayloadTooLarge(f"payload is {size} bytes, cap is {cap}")
    return gateway.invoke(account, bus_address, "publish",
                          [source_platform, target.platform_id, target.function_id,
                           canonical_text(payload)], max_fee, mode)


@dataclass
class IntegrationMessage:
    message_id: str
    sender: str
    source_platform: str
    target: Target
    payload: dict
    tx_id: str
    block_height: int


class PlatformRouter:
    """Per-platform consumer of bus events addressed to that platform."""

    def __init__(self, gateway: Gateway, platform: Platform, bus_address: str,
                 min_confirmations: int = 1, trace=None):
        self.gateway = gateway
        self.platform = platform
        self.bus_address = bus_address
        self.trace = trace if trace is not None else gateway.trace
        self.cursor = EventCursor(
            gateway.node,
            EventFilter(kinds=frozenset({EventKind.INTEGRATION}), emitter=bus_address,
                        name=BUS_EVENT, payload={"target_platform": platform.platform_id}),
            min_confirmations, gateway.credential())
        self.delivered: list[IntegrationMessage] = []
        self.dead_letters: list[dict] = []

    def _attribution_ok(self, tx_id: str, sender: str) -> bool:
        node = self.gateway.node
        tx = node.get_transaction(tx_id)
        return (tx is not None and tx.sender == sender
                and node.registry.verify_signature(tx.sender, tx.body_bytes(), tx.signature))

    def route_cycle(self) -> int:
        n = 0
        for ev in self.cursor.scan(self.gateway.credential()):
            p = ev.payload
            msg = IntegrationMessage(ev.event_id, p["sender"], p["source_platform"],
                                     Target(p["target_platform"], p["target_function"]),
                                     json.loads(p["payload"]), ev.tx_id, ev.block_height)
            if not self.platform.has_function(msg.target.function_id):
                self._dead_letter(msg, f"UnknownFunction: {msg.target.function_id}")
                continue
            trace_emit(self.trace, "bus_delivery", "message_bus", {
                "message_id": msg.message_id, "platform": self.platform.platform_id,
                "function": msg.target.function_id, "block_height": ev.block_height,
                "tx_id": ev.tx_id,
            })
            self.platform.invoke_function(msg.target.function_id, {
                "payload": msg.payload, "sender": msg.sender,
                "source_platform": msg.source_platform, "message_id": msg.message_id,
                "tx_id": msg.tx_id,
                "attribution_verified": self._attribution_ok(msg.tx_id, msg.sender),
            }, mode="async")
            self.delivered.append(msg)
            n += 1
        return n

    def _dead_letter(self, msg: IntegrationMessage, reason: str) -> None:
        tick = self.trace.now() if self.trace is not None else self.gateway.node.ticks
        record = {"message_id": msg.message_id, "reason": reason, "tick": tick}
        self.dead_letters.append(record)
        log.warning("dead-lettered %s on %s: %s", msg.message_id,
                    self.platform.platform_id, reason)
        trace_emit(self.trace, "dead_letter", "message_bus", record)

    def export_dead_letters(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.dead_letters:
                fh.write(canonical_text(r) + "\n")


def route_cycle(router: PlatformRouter) -> int:
    return router.route_cycle()
