"""Records shared between the ledger, the contract runtime and the gateway."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .canonical import canonical_bytes, digest, digest_obj
from .identity import Account, sign_transaction

Scalar = int | bool | str
SYSTEM_EMITTER = "system"
DEPLOY_FUNCTION = "__deploy__"


class EventKind(str, Enum):
    CONSENSUS = "Consensus"
    CONTRACT_STATE = "ContractState"
    BUSINESS_LOGIC = "BusinessLogic"
    EXTERNAL_CALL_REQUESTED = "ExternalCallRequested"
    INTEGRATION = "Integration"


CONTRACT_EVENT_KINDS = frozenset(EventKind) - {EventKind.CONSENSUS}


@dataclass
class Transaction:
    sender: str
    target: str
    function: str
    args: list[Any]
    max_fee: int
    nonce: int
    signature: str = ""

    def body(self) -> dict:
        return {
            "sender": self.sender,
            "target": self.target,
            "function": self.function,
            "args": list(self.args),
            "max_fee": self.max_fee,
            "nonce": self.nonce,
        }

    def body_bytes(self) -> bytes:
        return canonical_bytes(self.body())

    @property
    def tx_id(self) -> str:
        return digest(self.body_bytes())

    def to_dict(self) -> dict:
        return {**self.body(), "tx_id": self.tx_id, "signature": self.signature}

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        return cls(
            sender=d["sender"],
            target=d["target"],
            function=d["function"],
            args=list(d["args"]),
            max_fee=d["max_fee"],
            nonce=d["nonce"],
            signature=d["signature"],
        )


def build_transaction(account: Account, target, function, args, max_fee, nonce) -> Transaction:
    tx = Transaction(account.address, target, function, list(args), max_fee, nonce)
    tx.signature = sign_transaction(account, tx.body_bytes())
    return tx


@dataclass(frozen=True)
class ChainEvent:
    event_id: str
    kind: EventKind
    emitter: str
    name: str
    payload: dict
    block_height: int
    tx_id: str | None

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "kind": self.kind.value,
            "emitter": self.emitter,
            "name": self.name,
            "payload": dict(self.payload),
            "block_height": self.block_height,
            "tx_id": self.tx_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainEvent":
        return cls(
            d["event_id"], EventKind(d["kind"]), d["emitter"], d["name"],
            dict(d["payload"]), d["block_height"], d["tx_id"],
        )


def contract_event_id(tx_id: str, index: int, kind: EventKind, emitter: str, name: str,
                      payload: dict) -> str:
    # independent of block height so a reorged-then-reincluded emission keeps its identity
    return digest_obj({
        "tx_id": tx_id, "index": index, "kind": kind.value,
        "emitter": emitter, "name": name, "payload": payload,
    })


@dataclass
class Outcome:
    kind: str  # Returned | Reverted | OutOfGas | Unauthorized
    value: Any = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.kind == "Returned"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "reason": self.reason}


@dataclass
class Receipt:
    tx_id: str
    status: str  # Pending | Included | Dropped
    height: int | None = None
    outcome: Outcome | None = None
    fee_charged: int = 0
    steps: int = 0
    dropped_reason: str | None = None
    history: list[tuple[int, str]] = field(default_factory=list)
