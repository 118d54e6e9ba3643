"""Bridge between serverless platforms and the chain.

The gateway signs and submits invocations on behalf of platform identities,
monitors their durability, delivers chain events to FaaS functions by polling
the event log, answers historical queries and runs the oracle loop that turns
``ExternalCallRequested`` events into callback transactions.

Every chain-to-world interaction here is a pull: the gateway reads the event
log on its own schedule and the node never calls back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from .canonical import canonical_text, is_hex_digest
from .chaintypes import ChainEvent, EventKind, Transaction, build_transaction
from .contract_vm import resolve_name
from .errors import ChainFaasError, UnknownEndpoint, UnknownFunction, UnresolvableName
from .faas import Platform
from .identity import Account
from .ledger import EventFilter, Node
from .trace import Trace, emit

log = logging.getLogger(__name__)

FIRE_AND_FORGET = "FireAndForget"
AWAIT_DURABILITY = "AwaitDurability"


@dataclass(frozen=True)
class Mode:
    kind: str
    k: int = 0

    def __post_init__(self):
        if self.kind not in (FIRE_AND_FORGET, AWAIT_DURABILITY):
            raise ValueError(f"unknown invocation mode {self.kind!r}")
        if self.kind == AWAIT_DURABILITY and self.k < 1:
            raise ValueError("AwaitDurability needs K >= 1")

    @classmethod
    def fire_and_forget(cls) -> "Mode":
        return cls(FIRE_AND_FORGET)

    @classmethod
    def await_durability(cls, k: int) -> "Mode":
        return cls(AWAIT_DURABILITY, k)


@dataclass
class InvocationHandle:
    handle_id: str
    tx_id: str
    mode: Mode
    status: str = "Pending"  # Pending | Included | Durable | Dropped
    height: int | None = None
    submitted_tick: int = 0
    included_tick: int | None = None
    durable_tick: int | None = None
    missing_since: int | None = None

    @property
    def done(self) -> bool:
        return self.status in ("Durable", "Dropped")


@dataclass
class EventBinding:
    binding_id: str
    filter: EventFilter
    function_id: str
    platform_id: str | None = None
    min_confirmations: int = 1

    def __post_init__(self):
        if isinstance(self.filter, dict):
            self.filter = EventFilter.from_dict(self.filter)
        if self.filter.is_empty():
            raise ValueError("binding filter must not be empty")
        if self.min_confirmations < 1:
            raise ValueError("min_confirmations must be >= 1")


class EventCursor:
    """Incremental, reorg-tolerant scan of the event log with exactly-once marking.

    ``cursor`` is the highest height whose events are settled: final (more than
    ``R`` confirmations) and, if eligible, already handed out. Each scan covers
    ``cursor + 1 .. tip``; overlap with earlier scans is absorbed by the
    ``delivered`` set, keyed by event id.
    """

    def __init__(self, node: Node, filter: EventFilter, min_confirmations: int,
                 credential=None, from_genesis: bool = False):
        self.node = node
        self.filter = filter
        self.min_confirmations = min_confirmations
        # event id -> (height, block_hash) where it was first handed out
        self.delivered: dict[str, tuple[int, str]] = {}
        tip = node.tip_height
        self.cursor = 0 if from_genesis else max(0, tip - node.config.max_reorg_depth)
        if not from_genesis and tip > self.cursor:
            # events already on chain at subscription time are not future events
            for ev in node.read_event_log(self.cursor + 1, tip, filter, credential):
                self.delivered[ev.event_id] = (ev.block_height,
                                               node.blocks[ev.block_height].block_hash)

    def scan(self, credential=None) -> list[ChainEvent]:
        node = self.node
        tip = node.tip_height
        R = node.config.max_reorg_depth
        out = []
        if self.cursor < tip:
            for ev in node.read_event_log(self.cursor + 1, tip, self.filter, credential):
                if node.block_confirmations(ev.block_height) < self.min_confirmations:
                    break
                if ev.event_id in self.delivered:
                    continue
                self.delivered[ev.event_id] = (ev.block_height,
                                               node.blocks[ev.block_height].block_hash)
                out.append(ev)
        settled = tip - max(R, self.min_confirmations - 1)
        self.cursor = max(self.cursor, min(settled, tip))
        self._prune(R)
        return out

    def _prune(self, R: int) -> None:
        node = self.node
        stale = [
            eid for eid, (h, bh) in self.delivered.items()
            if h <= self.cursor and h <= node.tip_height
            and node.blocks[h].block_hash == bh and node.block_confirmations(h) > R + 1
        ]
        for eid in stale:
            del self.delivered[eid]


@dataclass
class Subscription:
    subscription_id: str
    binding: EventBinding
    cursor: EventCursor
    deliveries: int = 0


@dataclass
class Endpoint:
    """Webhook descriptor; in simulation ``procedure`` stands in for the HTTP call.

    ``procedure(payload, gateway)`` returns a scalar, a dict, or a
    :class:`Deferred` whose ``poll()`` eventually yields ``(result, ok)``.
    """

    name: str
    url: str = ""
    method: str = "POST"
    procedure: Callable[[dict, "Gateway"], Any] | None = None

    def descriptor(self) -> dict:
        return {"name": self.name, "url": self.url, "method": self.method}


class Deferred:
    def __init__(self, poll: Callable[[], tuple[Any, bool] | None]):
        self._poll = poll

    def poll(self):
        return self._poll()


@dataclass
class OracleTask:
    event_id: str
    endpoint: str
    callback_contract: str
    callback_function: str | None
    ref: Any
    status: str = "Captured"  # Captured | Invoked | CalledBack | Failed
    result: Any = None
    ok: bool | None = None
    callback_tx_id: str | None = None
    error: str | None = None
    deferred: Deferred | None = field(default=None, repr=False)


def to_scalar(value) -> int | bool | str:
    if value is None:
        return ""
    if isinstance(value, (bool, int, str)):
        return value
    return canonical_text(value)


class Gateway:
    def __init__(self, node: Node, platforms: dict[str, Platform] | None = None,
                 vault: dict[str, Account] | None = None, trace: Trace | None = None,
                 reader: str | None = None, oracle_account: str | None = None,
                 drop_timeout: int | None = None, k_oracle: int | None = None,
                 callback_max_fee: int = 100, poll_interval: int = 1):
        R = node.config.max_reorg_depth
        self.node = node
        self.platforms = platforms if platforms is not None else {}
        self.vault = vault if vault is not None else {}
        self.trace = trace
        self.reader = reader
        self.oracle_account = oracle_account
        self.drop_timeout = 4 * R if drop_timeout is None else drop_timeout
        self.k_oracle = R + 1 if k_oracle is None else k_oracle
        self.callback_max_fee = callback_max_fee
        self.poll_interval = poll_interval
        self.handles: dict[str, InvocationHandle] = {}
        self._monitored: list[InvocationHandle] = []
        self.subscriptions: dict[str, Subscription] = {}
        self.endpoints: dict[str, Endpoint] = {}
        # fallbacks consulted for endpoint names not in the table, in order
        self.endpoint_resolvers: list[Callable[[str], Endpoint | None]] = []
        self.oracle_tasks: dict[str, OracleTask] = {}
        self._oracle_cursor: EventCursor | None = None
        self._seq = 0

    # -- credentials -----------------------------------------------------

    def add_identity(self, alias: str, account: Account) -> None:
        self.vault[alias] = account

    def account(self, who: str | Account) -> Account:
        if isinstance(who, Account):
            return who
        if who in self.vault:
            return self.vault[who]
        return self.node.registry.get(who)

    def credential(self):
        if self.reader is None:
            return None
        return self.node.registry.read_credential(self.account(self.reader).address)

    def _next(self, prefix: str) -> str:
        self._seq += 1
        return f"{prefix}-{self._seq}"

    # -- invocation ------------------------------------------------------

    def resolve(self, contract_ref: str) -> str:
        if is_hex_digest(contract_ref) and contract_ref in self.node.contracts:
            return contract_ref
        address = resolve_name(self.node, contract_ref)
        if address is None:
            raise UnresolvableName(contract_ref)
        return address

    def invoke(self, account: str | Account, contract_ref: str, function: str, args,
               max_fee: int, mode: Mode | None = None) -> InvocationHandle:
        mode = mode or Mode.fire_and_forget()
        acct = self.account(account)
        target = self.resolve(contract_ref)
        tx = build_transaction(acct, target, function, list(args), max_fee,
                               self.node.next_nonce(acct.address))
        self.node.submit_transaction(tx)
        return self._track(tx, mode)

    def _track(self, tx: Transaction, mode: Mode) -> InvocationHandle:
        handle = InvocationHandle(self._next("h"), tx.tx_id, mode,
                                  submitted_tick=self.node.ticks)
        self.handles[handle.handle_id] = handle
        if mode.kind == AWAIT_DURABILITY:
            self._monitored.append(handle)
        emit(self.trace, "invoke", "gateway", {
            "handle_id": handle.handle_id, "tx_id": tx.tx_id, "mode": mode.kind,
            "k": mode.k, "function": tx.function, "target": tx.target,
        })
        return handle

    def monitor_durability(self) -> list[tuple[str, str, str]]:
        node = self.node
        now = node.ticks
        transitions = []

        def move(h: InvocationHandle, new: str):
            transitions.append((h.handle_id, h.status, new))
            emit(self.trace, "handle", "gateway", {
                "handle_id": h.handle_id, "tx_id": h.tx_id, "from": h.status, "to": new,
                "height": h.height,
            })
            h.status = new

        for h in self._monitored:
            if h.done:
                continue
            conf = node.get_confirmations(h.tx_id)
            if conf is None:
                if h.missing_since is None:
                    h.missing_since = now
                if now - h.missing_since >= self.drop_timeout:
                    move(h, "Dropped")
                continue
            h.missing_since = None
            if conf == 0:
                continue
            h.height = node.tx_index[h.tx_id]
            if h.status == "Pending":
                h.included_tick = now
                move(h, "Included")
            if conf >= h.mode.k:
                h.durable_tick = now
                move(h, "Durable")
        self._monitored = [h for h in self._monitored if not h.done]
        return transitions

    def outcome(self, handle: InvocationHandle):
        rec = self.node.get_receipt(handle.tx_id)
        return rec.outcome if rec else None

    # -- subscriptions ---------------------------------------------------

    def _platform_for(self, function_id: str, platform_id: str | None) -> Platform:
        if platform_id is not None:
            p = self.platforms.get(platform_id)
            if p is None or not p.has_function(function_id):
                raise UnknownFunction(f"{platform_id}/{function_id}")
            return p
        for p in self.platforms.values():
            if p.has_function(function_id):
                return p
        raise UnknownFunction(function_id)

    def subscribe(self, binding: EventBinding) -> str:
        platform = self._platform_for(binding.function_id, binding.platform_id)
        binding.platform_id = platform.platform_id
        sub_id = self._next("sub")
        self.subscriptions[sub_id] = Subscription(
            sub_id, binding,
            EventCursor(self.node, binding.filter, binding.min_confirmations, self.credential()))
        return sub_id

    def unsubscribe(self, subscription_id: str) -> None:
        del self.subscriptions[subscription_id]

    def poll_cycle(self) -> int:
        emit(self.trace, "poll_cycle", "gateway", {"tip": self.node.tip_height,
                                                   "subscriptions": len(self.subscriptions)})
        cred = self.credential()
        delivered = 0
        for sub in list(self.subscriptions.values()):
            try:
                events = sub.cursor.scan(cred)
            except ChainFaasError as exc:
                log.warning("poll of %s failed, retrying next cycle: %s", sub.subscription_id, exc)
                continue
            b = sub.binding
            platform = self.platforms[b.platform_id]
            for ev in events:
                emit(self.trace, "delivery", "gateway", {
                    "event_id": ev.event_id, "binding_id": b.binding_id,
                    "platform": b.platform_id, "function": b.function_id,
                    "block_height": ev.block_height,
                    "confirmations": self.node.block_confirmations(ev.block_height),
                })
                platform.invoke_function(b.function_id, ev.to_dict(), mode="async")
                sub.deliveries += 1
                delivered += 1
        return delivered

    def query_past_events(self, filter: EventFilter | dict | None,
                          range: tuple[int, int]) -> list[ChainEvent]:
        lo, hi = range
        if lo > hi:
            return []
        return self.node.read_event_log(lo, hi, filter, self.credential())

    # -- oracle ------------------------------------------------------------

    def add_endpoint(self, endpoint: Endpoint) -> None:
        self.endpoints[endpoint.name] = endpoint

    def find_endpoint(self, name: str) -> Endpoint | None:
        if name in self.endpoints:
            return self.endpoints[name]
        for resolver in self.endpoint_resolvers:
            ep = resolver(name)
            if ep is not None:
                return ep
        return None

    def oracle_cycle(self) -> list[OracleTask]:
        if self._oracle_cursor is None:
            self._oracle_cursor = EventCursor(
                self.node, EventFilter(kinds=frozenset({EventKind.EXTERNAL_CALL_REQUESTED})),
                self.k_oracle, from_genesis=True)
        completed: list[OracleTask] = []
        for ev in self._oracle_cursor.scan(self.credential()):
            task = self._capture(ev)
            if task.status in ("CalledBack", "Failed"):
                completed.append(task)
        for task in self.oracle_tasks.values():
            if task.status == "Invoked" and task.deferred is not None:
                polled = task.deferred.poll()
                if polled is not None:
                    result, ok = polled
                    self._callback(task, result, ok)
                    completed.append(task)
        return completed

    def _capture(self, ev: ChainEvent) -> OracleTask:
        p = ev.payload
        task = OracleTask(ev.event_id, str(p.get("endpoint", "")),
                          p.get("cb_contract", ev.emitter), p.get("cb"),
                          p.get("ref", ev.event_id))
        self.oracle_tasks[ev.event_id] = task
        emit(self.trace, "oracle_task", "gateway", {"event_id": ev.event_id,
             "endpoint": task.endpoint, "status": "Captured"})
        endpoint = self.find_endpoint(task.endpoint)
        if endpoint is None or endpoint.procedure is None:
            task.error = UnknownEndpoint.__name__
            self._callback(task, UnknownEndpoint.__name__, False)
            return task
        task.status = "Invoked"
        try:
            result = endpoint.procedure(dict(p), self)
        except Exception as exc:
            task.error = f"{type(exc).__name__}: {exc}"
            self._callback(task, task.error, False)
            return task
        if isinstance(result, Deferred):
            task.deferred = result
        else:
            self._callback(task, result, True)
        return task

    def _callback(self, task: OracleTask, result, ok: bool) -> None:
        task.result, task.ok = to_scalar(result), ok
        if task.callback_function is None or self.oracle_account is None:
            task.status = "Failed"
            task.error = task.error or "no callback target or oracle account"
        else:
            try:
                handle = self.invoke(self.oracle_account, task.callback_contract,
                                     task.callback_function, [task.ref, task.result, ok],
                                     self.callback_max_fee)
                task.callback_tx_id = handle.tx_id
                task.status = "CalledBack" if ok else "Failed"
            except ChainFaasError as exc:
                task.status = "Failed"
                task.error = f"callback submission failed: {type(exc).__name__}: {exc}"
        emit(self.trace, "oracle_task", "gateway", {
            "event_id": task.event_id, "endpoint": task.endpoint, "status": task.status,
            "result": task.result, "ok": ok, "callback_tx_id": task.callback_tx_id,
        })


# module-level aliases matching the operation names
def invoke(gateway: Gateway, account, contract_ref, function, args, max_fee, mode=None):
    return gateway.invoke(account, contract_ref, function, args, max_fee, mode)


def monitor_durability(gateway: Gateway):
    return gateway.monitor_durability()


def subscribe(gateway: Gateway, binding: EventBinding) -> str:
    return gateway.subscribe(binding)


def poll_cycle(gateway: Gateway) -> int:
    return gateway.poll_cycle()


def query_past_events(gateway: Gateway, filter, range):
    return gateway.query_past_events(filter, range)


def oracle_cycle(gateway: Gateway):
    return gateway.oracle_cycle()
