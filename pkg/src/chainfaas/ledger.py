"""Simulated blockchain node.

Single-chain model with bounded rollback: each consensus tick either appends a
block or, with probability ``fork_probability``, orphans the newest ``d`` blocks
(``d`` uniform in ``[1, max_reorg_depth]``) and appends a replacement. A block
with more than ``max_reorg_depth`` confirmations can therefore never be
orphaned.

The node is pull-only: nothing here accepts an outbound callback, and events
leave the chain exclusively through :meth:`Node.read_event_log`.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .canonical import canonical_bytes, digest_obj
from .chaintypes import (
    SYSTEM_EMITTER,
    ChainEvent,
    EventKind,
    Outcome,
    Receipt,
    Transaction,
    contract_event_id,
)
from .contract_vm import (
    NAME_SERVICE,
    NAME_SERVICE_ADDRESS,
    BlockContext,
    ContractDefinition,
    WorldState,
    execute_contract_function,
)
from .errors import (
    AuthRequired,
    BadNonce,
    ChainLoadError,
    InsufficientFunds,
    InvalidSignature,
    RangeBeyondTip,
    Unauthorized,
    UnknownContract,
)
from .identity import Credential, Registry
from .trace import Trace, emit

GENESIS_PARENT = "0" * 64
NOT_ON_CHAIN = None


@dataclass
class ChainConfig:
    fork_probability: float = 0.0
    max_reorg_depth: int = 1
    block_capacity: int = 10
    gas_price: int = 1
    rng_seed: int = 0
    reads_require_auth: bool = False

    def __post_init__(self):
        if not 0.0 <= self.fork_probability <= 1.0:
            raise ValueError("fork_probability must be in [0, 1]")
        if self.max_reorg_depth < 1:
            raise ValueError("max_reorg_depth must be >= 1")
        if self.block_capacity < 1:
            raise ValueError("block_capacity must be >= 1")
        if self.gas_price < 0:
            raise ValueError("gas_price must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass
class EventFilter:
    kinds: frozenset[EventKind] | None = None
    emitter: str | None = None
    name: str | None = None
    payload: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict | None) -> "EventFilter":
        d = d or {}
        kinds = d.get("kinds")
        if isinstance(kinds, str):
            kinds = [kinds]
        return cls(
            frozenset(EventKind(k) for k in kinds) if kinds else None,
            d.get("emitter"),
            d.get("name"),
            dict(d.get("payload", {})),
        )

    def to_dict(self) -> dict:
        d: dict[str, Any] = {}
        if self.kinds:
            d["kinds"] = sorted(k.value for k in self.kinds)
        if self.emitter is not None:
            d["emitter"] = self.emitter
        if self.name is not None:
            d["name"] = self.name
        if self.payload:
            d["payload"] = dict(self.payload)
        return d

    def is_empty(self) -> bool:
        return not (self.kinds or self.emitter is not None or self.name is not None
                    or self.payload)

    def matches(self, ev: ChainEvent) -> bool:
        if self.kinds and ev.kind not in self.kinds:
            return False
        if self.emitter is not None and ev.emitter != self.emitter:
            return False
        if self.name is not None and ev.name != self.name:
            return False
        for k, v in self.payload.items():
            if k not in ev.payload:
                return False
            got = ev.payload[k]
            if type(got) is not type(v) or got != v:
                return False
        return True


@dataclass
class Block:
    height: int
    parent_hash: str
    timestamp: int
    transactions: list[Transaction]
    receipts: list[dict]
    events: list[ChainEvent]
    state_digest: str
    block_hash: str = ""

    def content(self) -> dict:
        return {
            "height": self.height,
            "parent_hash": self.parent_hash,
            "timestamp": self.timestamp,
            "transactions": [t.to_dict() for t in self.transactions],
            "receipts": list(self.receipts),
            "events": [e.to_dict() for e in self.events],
            "state_digest": self.state_digest,
        }

    def compute_hash(self) -> str:
        return digest_obj(self.content())

    def to_dict(self) -> dict:
        return {**self.content(), "block_hash": self.block_hash}

    def canonical(self) -> bytes:
        return canonical_bytes(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        return cls(
            d["height"], d["parent_hash"], d["timestamp"],
            [Transaction.from_dict(t) for t in d["transactions"]],
            list(d["receipts"]),
            [ChainEvent.from_dict(e) for e in d["events"]],
            d["state_digest"], d["block_hash"],
        )


@dataclass
class ReorgNotice:
    depth: int
    orphaned: list[Block]
    replacement: Block

    @property
    def height(self) -> int:
        return self.replacement.height


@dataclass
class IntegrityReport:
    first_bad_height: int | None = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.first_bad_height is None


class Node:
    def __init__(self, config: ChainConfig | None = None, registry: Registry | None = None,
                 trace: Trace | None = None):
        self.config = config or ChainConfig()
        self.registry = registry if registry is not None else Registry()
        self.trace = trace
        self.rng = random.Random(self.config.rng_seed)
        self.ticks = 0
        self.contracts: dict[str, Any] = {NAME_SERVICE_ADDRESS: NAME_SERVICE}
        self.blocks: list[Block] = []
        self.storage_bytes: list[bytearray] = []  # the stored (tamperable) form of each block
        self._states: list[dict[str, dict]] = []  # contract storage after each block
        self._nonces: list[dict[str, int]] = []
        self._fees: list[list[tuple[str, int]]] = []
        self.mempool: deque[Transaction] = deque()
        self._mempool_ids: set[str] = set()
        self._pending_per_sender: dict[str, int] = {}
        self.tx_index: dict[str, int] = {}
        self.receipts: dict[str, Receipt] = {}
        self.transactions: dict[str, Transaction] = {}
        self.orphan_log: list[tuple[int, int, list[str]]] = []  # (tick, depth, tx_ids)
        # highest height that has ever had more than R confirmations; never orphaned
        self.final_height = 0
        self._append_genesis()

    # -- basic accessors -------------------------------------------------

    @property
    def tip_height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def contract_storage(self, address: str) -> dict:
        return self._states[-1].get(address, {})

    def chain_nonce(self, sender: str) -> int:
        return self._nonces[-1].get(sender, 0)

    def next_nonce(self, sender: str) -> int:
        return self.chain_nonce(sender) + self._pending_per_sender.get(sender, 0)

    def in_mempool(self, tx_id: str) -> bool:
        return tx_id in self._mempool_ids

    def get_transaction(self, tx_id: str) -> Transaction | None:
        return self.transactions.get(tx_id)

    def get_receipt(self, tx_id: str) -> Receipt | None:
        return self.receipts.get(tx_id)

    def install_contract(self, address: str, definition: ContractDefinition, deployer: str):
        self.contracts[address] = definition
        self.registry.contract_deployers[address] = deployer

    # -- genesis ---------------------------------------------------------

    def _state_digest(self, storage: dict, nonces: dict) -> str:
        balances = {a: acc.balance for a, acc in sorted(self.registry.accounts.items())}
        return digest_obj({"storage": storage, "nonces": nonces, "balances": balances})

    def _append_genesis(self) -> None:
        block = Block(0, GENESIS_PARENT, 0, [], [], [],
                      digest_obj({"storage": {}, "nonces": {}, "balances": {}}))
        block.block_hash = block.compute_hash()
        self._append(block, {}, {}, [])

    def _append(self, block: Block, storage: dict, nonces: dict, fees) -> None:
        self.blocks.append(block)
        self.storage_bytes.append(bytearray(block.canonical()))
        self._states.append(storage)
        self._nonces.append(nonces)
        self._fees.append(fees)
        self.final_height = max(self.final_height,
                                self.tip_height - self.config.max_reorg_depth)

    # -- submission ------------------------------------------------------

    def submit_transaction(self, tx: Transaction) -> Receipt:
        if tx.sender not in self.registry:
            raise InvalidSignature(f"unknown sender {tx.sender}")
        if not self.registry.verify_signature(tx.sender, tx.body_bytes(), tx.signature):
            raise InvalidSignature(tx.tx_id)
        contract = self.contracts.get(tx.target)
        if contract is None:
            raise UnknownContract(tx.target)
        expected = self.next_nonce(tx.sender)
        if tx.nonce != expected:
            raise BadNonce(f"expected nonce {expected}, got {tx.nonce}")
        if tx.max_fee < 0 or tx.max_fee > self.registry.get(tx.sender).balance:
            raise InsufficientFunds(f"max_fee {tx.max_fee} exceeds balance")
        if (isinstance(contract, ContractDefinition) and tx.function in contract.restricted
                and not self.registry.is_granted(tx.sender, tx.target, tx.function)):
            raise Unauthorized(f"{tx.sender} may not call {tx.function}")
        tx_id = tx.tx_id
        self.mempool.append(tx)
        self._mempool_ids.add(tx_id)
        self._pending_per_sender[tx.sender] = self._pending_per_sender.get(tx.sender, 0) + 1
        self.transactions[tx_id] = tx
        receipt = Receipt(tx_id, "Pending")
        receipt.history.append((self.ticks, "Pending"))
        self.receipts[tx_id] = receipt
        emit(self.trace, "tx_submitted", "ledger", {
            "tx_id": tx_id, "sender": tx.sender, "target": tx.target,
            "function": tx.function, "args": list(tx.args), "max_fee": tx.max_fee,
            "nonce": tx.nonce,
        })
        return receipt

    def _pop_mempool(self) -> Transaction:
        tx = self.mempool.popleft()
        self._mempool_ids.discard(tx.tx_id)
        n = self._pending_per_sender[tx.sender] - 1
        if n:
            self._pending_per_sender[tx.sender] = n
        else:
            del self._pending_per_sender[tx.sender]
        return tx

    # -- consensus -------------------------------------------------------

    def consensus_tick(self) -> Block | ReorgNotice:
        self.ticks += 1
        reorg = self.rng.random() < self.config.fork_probability and self.tip_height >= 1
        if not reorg:
            block = self._produce_block()
            return block
        # a single replacement block shortens the chain, so without the finality
        # cap a later reorg could reach a block that already exceeded R confirmations
        depth = min(self.rng.randint(1, self.config.max_reorg_depth), self.tip_height,
                    self.tip_height - self.final_height)
        orphaned = self._rollback(depth)
        replacement = self._produce_block()
        return ReorgNotice(depth, orphaned, replacement)

    def _rollback(self, depth: int) -> list[Block]:
        orphaned: list[Block] = []
        for _ in range(depth):
            block = self.blocks.pop()
            self.storage_bytes.pop()
            self._states.pop()
            self._nonces.pop()
            for sender, fee in self._fees.pop():
                self.registry.refund(sender, fee)
            orphaned.append(block)
        orphaned.reverse()
        returned: list[Transaction] = []
        for block in orphaned:
            for tx in block.transactions:
                tx_id = tx.tx_id
                del self.tx_index[tx_id]
                rec = self.receipts[tx_id]
                rec.status, rec.height, rec.outcome = "Pending", None, None
                rec.fee_charged = rec.steps = 0
                rec.history.append((self.ticks, "Orphaned"))
                returned.append(tx)
        for tx in reversed(returned):
            self.mempool.appendleft(tx)
            self._mempool_ids.add(tx.tx_id)
            self._pending_per_sender[tx.sender] = self._pending_per_sender.get(tx.sender, 0) + 1
        ids = [t.tx_id for t in returned]
        self.orphan_log.append((self.ticks, depth, ids))
        emit(self.trace, "reorg", "ledger", {
            "depth": depth, "orphaned_blocks": [b.block_hash for b in orphaned],
            "returned_txs": ids,
        })
        return orphaned

    def _drop(self, tx: Transaction, reason: str) -> None:
        rec = self.receipts[tx.tx_id]
        rec.status, rec.dropped_reason = "Dropped", reason
        rec.history.append((self.ticks, "Dropped"))
        emit(self.trace, "tx_dropped", "ledger", {"tx_id": tx.tx_id, "reason": reason})

    def _drop_sender_followups(self, sender: str) -> None:
        # later txs from a sender whose earlier tx was dropped can never satisfy the nonce rule
        keep = deque()
        while self.mempool:
            tx = self._pop_mempool()
            if tx.sender == sender:
                self._drop(tx, "nonce gap")
            else:
                keep.append(tx)
        for tx in keep:
            self.mempool.append(tx)
            self._mempool_ids.add(tx.tx_id)
            self._pending_per_sender[tx.sender] = self._pending_per_sender.get(tx.sender, 0) + 1

    def _produce_block(self) -> Block:
        height = self.tip_height + 1
        parent = self.tip
        storage = self._states[-1]
        nonces = dict(self._nonces[-1])
        ctx = BlockContext(height, self.config.gas_price)
        included: list[Transaction] = []
        receipts: list[dict] = []
        events: list[ChainEvent] = []
        fees: list[tuple[str, int]] = []
        while self.mempool and len(included) < self.config.block_capacity:
            tx = self._pop_mempool()
            account = self.registry.accounts.get(tx.sender)
            if tx.nonce != nonces.get(tx.sender, 0):
                self._drop(tx, "bad nonce")
                continue
            if account is None or tx.max_fee > account.balance:
                self._drop(tx, "insufficient funds")
                self._drop_sender_followups(tx.sender)
                continue
            world = WorldState(self.contracts, storage, self.registry.is_granted)
            result = execute_contract_function(world, tx, ctx)
            storage = result.new_state.storage
            nonces[tx.sender] = tx.nonce + 1
            self.registry.charge(tx.sender, result.fee_charged)
            fees.append((tx.sender, result.fee_charged))
            tx_id = tx.tx_id
            for i, (kind, name, payload) in enumerate(result.events):
                events.append(ChainEvent(
                    contract_event_id(tx_id, i, kind, tx.target, name, payload),
                    kind, tx.target, name, payload, height, tx_id,
                ))
            included.append(tx)
            receipts.append({"tx_id": tx_id, "outcome": result.outcome.to_dict(),
                             "fee": result.fee_charged, "steps": result.steps})
            self.tx_index[tx_id] = height
            rec = self.receipts[tx_id]
            rec.status, rec.height, rec.outcome = "Included", height, result.outcome
            rec.fee_charged, rec.steps = result.fee_charged, result.steps
            rec.history.append((self.ticks, "Included"))
        consensus_payload = {"height": height, "parent_hash": parent.block_hash,
                             "timestamp": self.ticks, "tx_count": len(included)}
        events.append(ChainEvent(
            digest_obj({"consensus": "NewBlock", **consensus_payload}),
            EventKind.CONSENSUS, SYSTEM_EMITTER, "NewBlock", consensus_payload, height, None,
        ))
        block = Block(height, parent.block_hash, self.ticks, included, receipts, events,
                      self._state_digest(storage, nonces))
        block.block_hash = block.compute_hash()
        self._append(block, storage, nonces, fees)
        for tx, r in zip(included, receipts):
            emit(self.trace, "tx_executed", "ledger", {
                "tx_id": r["tx_id"], "height": height, "outcome": r["outcome"],
                "fee": r["fee"], "steps": r["steps"], "sender": tx.sender,
                "target": tx.target, "function": tx.function,
            })
        for ev in events:
            emit(self.trace, "event", "ledger", ev.to_dict())
        emit(self.trace, "block", "ledger", {
            "height": height, "block_hash": block.block_hash, "parent_hash": block.parent_hash,
            "tx_count": len(included), "state_digest": block.state_digest,
        })
        return block

    # -- reads -----------------------------------------------------------

    def read_event_log(self, from_height: int, to_height: int,
                       filter: EventFilter | dict | None = None,
                       credential: Credential | None = None) -> list[ChainEvent]:
        if self.config.reads_require_auth and not self.registry.check_credential(credential):
            raise AuthRequired("event log reads require an account credential")
        if to_height > self.tip_height or from_height < 0:
            raise RangeBeyondTip(f"[{from_height}, {to_height}] outside [0, {self.tip_height}]")
        if not isinstance(filter, EventFilter):
            filter = EventFilter.from_dict(filter)
        out = []
        for h in range(from_height, to_height + 1):
            out.extend(ev for ev in self.blocks[h].events if filter.matches(ev))
        return out

    def get_confirmations(self, tx_id: str) -> int | None:
        h = self.tx_index.get(tx_id)
        if h is not None:
            return self.tip_height - h + 1
        if tx_id in self._mempool_ids:
            return 0
        return NOT_ON_CHAIN

    def block_confirmations(self, height: int) -> int:
        return self.tip_height - height + 1

    # -- integrity -------------------------------------------------------

    def verify_chain_integrity(self) -> IntegrityReport:
        prev_hash = None
        for h, raw in enumerate(self.storage_bytes):
            try:
                d = json.loads(bytes(raw).decode("utf-8"))
                block = Block.from_dict(d)
            except (ValueError, KeyError, TypeError) as exc:
                return IntegrityReport(h, f"undecodable block: {exc}")
            if canonical_bytes(d) != bytes(raw):
                return IntegrityReport(h, "non-canonical encoding")
            if block.height != h:
                return IntegrityReport(h, "height mismatch")
            if block.compute_hash() != block.block_hash:
                return IntegrityReport(h, "block hash mismatch")
            expected_parent = GENESIS_PARENT if prev_hash is None else prev_hash
            if block.parent_hash != expected_parent:
                return IntegrityReport(h, "broken parent link")
            for stored, tx in zip(d["transactions"], block.transactions):
                if stored["tx_id"] != tx.tx_id:
                    return IntegrityReport(h, "tx id mismatch")
                if tx.sender not in self.registry or not self.registry.verify_signature(
                        tx.sender, tx.body_bytes(), tx.signature):
                    return IntegrityReport(h, "bad transaction signature")
            prev_hash = block.block_hash
        return IntegrityReport()

    # -- dump / load -----------------------------------------------------

    def dump_chain(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            for raw in self.storage_bytes:
                fh.write(bytes(raw) + b"\n")


def load_blocks(path: str | Path) -> list[Block]:
    """Parse a JSON Lines chain dump and check its hash links."""
    blocks = []
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip(b"\n")
            if not line:
                continue
            try:
                block = Block.from_dict(json.loads(line.decode("utf-8")))
            except (ValueError, KeyError, TypeError) as exc:
                raise ChainLoadError(f"line {lineno + 1}: {exc}") from None
            if block.compute_hash() != block.block_hash:
                raise ChainLoadError(f"block {block.height}: hash mismatch")
            parent = blocks[-1].block_hash if blocks else GENESIS_PARENT
            if block.parent_hash != parent:
                raise ChainLoadError(f"block {block.height}: broken parent link")
            blocks.append(block)
    return blocks


# module-level aliases matching the operation names
def submit_transaction(node: Node, tx: Transaction) -> Receipt:
    return node.submit_transaction(tx)


def consensus_tick(node: Node):
    return node.consensus_tick()


def read_event_log(node: Node, from_height, to_height, filter=None, credential=None):
    return node.read_event_log(from_height, to_height, filter, credential)


def get_confirmations(node: Node, tx_id: str):
    return node.get_confirmations(tx_id)


def verify_chain_integrity(node: Node) -> IntegrityReport:
    return node.verify_chain_integrity()


__all__ = [
    "Block", "ChainConfig", "EventFilter", "IntegrityReport", "Node", "NOT_ON_CHAIN",
    "Outcome", "ReorgNotice", "consensus_tick", "get_confirmations", "load_blocks",
    "read_event_log", "submit_transaction", "verify_chain_integrity",
]

