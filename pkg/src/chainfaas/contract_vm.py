"""Metered guarded-command contract runtime, digest addressing and the name service.

A contract is a canonical JSON document::

    {"functions": [{"name": "inc", "params": [],
                    "body": [{"guard": {"lit": true},
                              "actions": [{"set": {"lit": "count"}, "value": ...}]}]}],
     "restricted": []}

Expressions are one of ``{"lit": v}``, ``{"arg": i}``,
``{"state": key_expr, "default": v}``, ``{"ctx": "sender" | "block_height"}`` and
``{"op": name, "args": [...]}``. Actions are ``set``, ``emit``, ``return`` and
``revert``. Guarded commands are tried in order and the first one whose guard
holds runs; a function where no guard holds reverts.

Each evaluated guard and each executed action is one metered step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .canonical import canonical_bytes, digest, digest_obj
from .chaintypes import (
    CONTRACT_EVENT_KINDS,
    DEPLOY_FUNCTION,
    EventKind,
    Outcome,
    Transaction,
    build_transaction,
)
from .errors import ContractExists, InvalidDefinition, NameOwnedByOther, UnknownContract

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

BINARY_OPS = {"+", "-", "*", "==", "!=", "<", ">=", "and", "or"}
OPS = BINARY_OPS | {"not", "concat"}
PARAM_TYPES = {"int", "bool", "str", "any"}
CTX_NAMES = {"sender", "block_height"}
EMITTABLE = {k.value for k in CONTRACT_EVENT_KINDS}


# --------------------------------------------------------------------------
# authoring helpers
# --------------------------------------------------------------------------

def lit(value):
    return {"lit": value}


def arg(index: int):
    return {"arg": index}


def state(key, default=None):
    key = lit(key) if isinstance(key, str) else key
    node = {"state": key}
    if default is not None:
        node["default"] = default
    return node


def sender():
    return {"ctx": "sender"}


def block_height():
    return {"ctx": "block_height"}


def op(name: str, *args):
    return {"op": name, "args": list(args)}


def set_(key, value):
    return {"set": lit(key) if isinstance(key, str) else key, "value": value}


def emit(kind: EventKind | str, name: str, payload: dict | None = None):
    kind = kind.value if isinstance(kind, EventKind) else kind
    return {"emit": kind, "name": name, "payload": dict(payload or {})}


def return_(value):
    return {"return": value}


def revert(reason: str):
    return {"revert": reason}


def command(guard, *actions):
    return {"guard": guard, "actions": list(actions)}


def function(name: str, params: list[str], *body):
    return {"name": name, "params": list(params), "body": list(body)}


# --------------------------------------------------------------------------
# definitions
# --------------------------------------------------------------------------

@dataclass
class FunctionDef:
    name: str
    params: list[str]
    body: list[dict]


@dataclass
class ContractDefinition:
    functions: dict[str, FunctionDef]
    restricted: frozenset[str] = frozenset()
    deployer: str | None = None  # set on deployment, not part of the code digest
    _order: list[str] = field(default_factory=list, repr=False)

    def to_document(self) -> dict:
        names = self._order or list(self.functions)
        return {
            "functions": [
                {"name": n, "params": list(self.functions[n].params),
                 "body": self.functions[n].body}
                for n in names
            ],
            "restricted": sorted(self.restricted),
        }

    def canonical(self) -> bytes:
        return canonical_bytes(self.to_document())

    @property
    def address(self) -> str:
        return digest(self.canonical())

    @classmethod
    def from_document(cls, doc: dict) -> "ContractDefinition":
        validate_document(doc)
        functions = {}
        order = []
        for f in doc["functions"]:
            functions[f["name"]] = FunctionDef(f["name"], list(f["params"]), f["body"])
            order.append(f["name"])
        return cls(functions, frozenset(doc.get("restricted", ())), None, order)


def _check_expr(e, where: str, arity: int) -> None:
    if not isinstance(e, dict) or len(e) == 0:
        raise InvalidDefinition(f"{where}: expression must be an object")
    if "lit" in e:
        v = e["lit"]
        if len(e) != 1 or not isinstance(v, (int, str, bool)):
            raise InvalidDefinition(f"{where}: bad literal {e!r}")
        if type(v) is int and not INT_MIN <= v <= INT_MAX:
            raise InvalidDefinition(f"{where}: literal out of range")
    elif "arg" in e:
        i = e["arg"]
        if len(e) != 1 or type(i) is not int or not 0 <= i < arity:
            raise InvalidDefinition(f"{where}: bad argument reference {e!r}")
    elif "state" in e:
        if set(e) - {"state", "default"}:
            raise InvalidDefinition(f"{where}: bad state reference")
        _check_expr(e["state"], where, arity)
        if "default" in e and not isinstance(e["default"], (int, str, bool)):
            raise InvalidDefinition(f"{where}: bad state default")
    elif "ctx" in e:
        if len(e) != 1 or e["ctx"] not in CTX_NAMES:
            raise InvalidDefinition(f"{where}: unknown context {e!r}")
    elif "op" in e:
        name, args = e["op"], e.get("args")
        if set(e) != {"op", "args"} or name not in OPS or not isinstance(args, list):
            raise InvalidDefinition(f"{where}: bad operator node {e!r}")
        if name in BINARY_OPS and len(args) != 2:
            raise InvalidDefinition(f"{where}: {name} takes two operands")
        if name == "not" and len(args) != 1:
            raise InvalidDefinition(f"{where}: not takes one operand")
        if name == "concat" and not args:
            raise InvalidDefinition(f"{where}: concat needs operands")
        for a in args:
            _check_expr(a, where, arity)
    else:
        raise InvalidDefinition(f"{where}: unknown expression {e!r}")


def _check_action(a, where: str, arity: int) -> None:
    if not isinstance(a, dict):
        raise InvalidDefinition(f"{where}: action must be an object")
    if "set" in a:
        if set(a) != {"set", "value"}:
            raise InvalidDefinition(f"{where}: bad set action")
        _check_expr(a["set"], where, arity)
        _check_expr(a["value"], where, arity)
    elif "emit" in a:
        if set(a) != {"emit", "name", "payload"} or a["emit"] not in EMITTABLE:
            raise InvalidDefinition(f"{where}: bad emit action {a!r}")
        if not isinstance(a["name"], str) or not isinstance(a["payload"], dict):
            raise InvalidDefinition(f"{where}: bad emit action {a!r}")
        for v in a["payload"].values():
            _check_expr(v, where, arity)
    elif "return" in a:
        if len(a) != 1:
            raise InvalidDefinition(f"{where}: bad return action")
        _check_expr(a["return"], where, arity)
    elif "revert" in a:
        if len(a) != 1 or not isinstance(a["revert"], str):
            raise InvalidDefinition(f"{where}: bad revert action")
    else:
        raise InvalidDefinition(f"{where}: unknown action {a!r}")


def validate_document(doc: Any) -> None:
    """Raise InvalidDefinition unless doc is a well-formed contract document."""
    if not isinstance(doc, dict) or set(doc) - {"functions", "restricted"}:
        raise InvalidDefinition("contract document must have 'functions' and optional 'restricted'")
    fns = doc.get("functions")
    if not isinstance(fns, list) or not fns:
        raise InvalidDefinition("at least one function required")
    names = [f.get("name") if isinstance(f, dict) else None for f in fns]
    if len(set(names)) != len(names):
        raise InvalidDefinition("duplicate function names")
    for f in fns:
        if set(f) != {"name", "params", "body"}:
            raise InvalidDefinition(f"function {f.get('name')!r}: bad fields")
        name = f["name"]
        if not isinstance(name, str) or not name or name.startswith("__"):
            raise InvalidDefinition(f"bad function name {name!r}")
        if not isinstance(f["params"], list) or any(p not in PARAM_TYPES for p in f["params"]):
            raise InvalidDefinition(f"function {name}: bad params")
        if not isinstance(f["body"], list) or not f["body"]:
            raise InvalidDefinition(f"function {name}: empty body")
        for i, gc in enumerate(f["body"]):
            where = f"{name}[{i}]"
            if not isinstance(gc, dict) or set(gc) != {"guard", "actions"}:
                raise InvalidDefinition(f"{where}: guarded command needs guard and actions")
            _check_expr(gc["guard"], where, len(f["params"]))
            if not isinstance(gc["actions"], list):
                raise InvalidDefinition(f"{where}: actions must be a list")
            for a in gc["actions"]:
                _check_action(a, where, len(f["params"]))
    restricted = doc.get("restricted", [])
    if not isinstance(restricted, list) or any(r not in names for r in restricted):
        raise InvalidDefinition("restricted names must be declared functions")


def validate_definition(definition: ContractDefinition) -> None:
    validate_document(definition.to_document())


def contract_address(definition: ContractDefinition | dict) -> str:
    if isinstance(definition, dict):
        return digest_obj(definition)
    return definition.address


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------

@dataclass
class WorldState:
    contracts: Mapping[str, Any]
    storage: Mapping[str, Mapping[str, Any]]
    is_granted: Callable[[str, str, str], bool] = lambda s, c, f: True


@dataclass
class BlockContext:
    height: int
    gas_price: int


@dataclass
class ExecutionResult:
    new_state: WorldState
    events: list[tuple[EventKind, str, dict]]  # (kind, name, payload)
    steps: int
    fee_charged: int
    outcome: Outcome


class _OutOfGas(Exception):
    pass


class _Revert(Exception):
    def __init__(self, reason: str):
        self.reason = reason


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class Meter:
    def __init__(self, gas_price: int, max_fee: int):
        self.gas_price = gas_price
        self.max_fee = max_fee
        self.steps = 0

    def step(self) -> None:
        if (self.steps + 1) * self.gas_price > self.max_fee:
            raise _OutOfGas()
        self.steps += 1

    @property
    def fee(self) -> int:
        return self.steps * self.gas_price


def _is_int(v) -> bool:
    return type(v) is int


def _checked(v: int) -> int:
    if not INT_MIN <= v <= INT_MAX:
        raise _Revert("integer overflow")
    return v


def _to_text(v) -> str:
    if type(v) is bool:
        return "true" if v else "false"
    return str(v)


class _Frame:
    def __init__(self, args, storage, tx_sender, height):
        self.args = args
        self.storage = storage
        self.sender = tx_sender
        self.height = height

    def eval(self, e):
        if "lit" in e:
            return e["lit"]
        if "arg" in e:
            return self.args[e["arg"]]
        if "state" in e:
            key = self.eval(e["state"])
            if not isinstance(key, str):
                raise _Revert("state key must be a string")
            if key in self.storage:
                return self.storage[key]
            return e.get("default", 0)
        if "ctx" in e:
            return self.sender if e["ctx"] == "sender" else self.height
        name = e["op"]
        if name == "and":
            a = self._bool(self.eval(e["args"][0]))
            return a and self._bool(self.eval(e["args"][1]))
        if name == "or":
            a = self._bool(self.eval(e["args"][0]))
            return a or self._bool(self.eval(e["args"][1]))
        vals = [self.eval(a) for a in e["args"]]
        if name == "not":
            return not self._bool(vals[0])
        if name == "concat":
            return "".join(_to_text(v) for v in vals)
        a, b = vals
        if name == "==":
            return type(a) is type(b) and a == b
        if name == "!=":
            return not (type(a) is type(b) and a == b)
        if name in ("<", ">="):
            if not ((_is_int(a) and _is_int(b)) or (isinstance(a, str) and isinstance(b, str))):
                raise _Revert(f"type error in {name}")
            return a < b if name == "<" else a >= b
        if not (_is_int(a) and _is_int(b)):
            raise _Revert(f"type error in {name}")
        if name == "+":
            return _checked(a + b)
        if name == "-":
            return _checked(a - b)
        return _checked(a * b)

    @staticmethod
    def _bool(v) -> bool:
        if type(v) is not bool:
            raise _Revert("expected boolean")
        return v


def _type_ok(value, t: str) -> bool:
    if t == "any":
        return isinstance(value, (int, str, bool))
    if t == "int":
        return _is_int(value) and INT_MIN <= value <= INT_MAX
    if t == "bool":
        return type(value) is bool
    return isinstance(value, str)


def run_guarded_commands(fdef: FunctionDef, args, storage: dict, tx_sender: str,
                         height: int, meter: Meter, events: list) -> Any:
    """Interpret one function body against a mutable storage copy.

    Raises _Revert / _OutOfGas; returns the returned value (None when the
    selected command finishes without a return action).
    """
    frame = _Frame(args, storage, tx_sender, height)
    for gc in fdef.body:
        meter.step()
        guard = frame.eval(gc["guard"])
        if type(guard) is not bool:
            raise _Revert("guard must be boolean")
        if not guard:
            continue
        for action in gc["actions"]:
            meter.step()
            if "set" in action:
                key = frame.eval(action["set"])
                if not isinstance(key, str):
                    raise _Revert("state key must be a string")
                storage[key] = frame.eval(action["value"])
            elif "emit" in action:
                payload = {k: frame.eval(v) for k, v in action["payload"].items()}
                events.append((EventKind(action["emit"]), action["name"], payload))
            elif "return" in action:
                return frame.eval(action["return"])
            else:
                raise _Revert(action["revert"])
        return None
    raise _Revert("no guard matched")


def execute_contract_function(world_state: WorldState, tx: Transaction,
                              block_ctx: BlockContext) -> ExecutionResult:
    """Execute tx against world_state; never raises for contract-level failures.

    Fee rules: steps x gas_price on success or revert, max_fee on OutOfGas and
    one step for dispatch failures (unknown function, bad arguments,
    unauthorized sender). State and events are discarded unless Returned.
    """
    gas_price = block_ctx.gas_price
    contract = world_state.contracts.get(tx.target)

    def failed(kind, reason, steps, fee):
        return ExecutionResult(world_state, [], steps, fee, Outcome(kind, None, reason))

    one_step_fee = min(gas_price, tx.max_fee)
    if contract is None:
        return failed("Reverted", "unknown contract", 1, one_step_fee)
    if tx.function == DEPLOY_FUNCTION:
        return ExecutionResult(world_state, [], 0, 0, Outcome("Returned", tx.target))

    meter = Meter(gas_price, tx.max_fee)
    old_storage = world_state.storage.get(tx.target, {})
    storage = dict(old_storage)
    events: list = []
    try:
        if isinstance(contract, NativeContract):
            value = contract.execute(tx, storage, block_ctx.height, meter, events, world_state)
        else:
            fdef = contract.functions.get(tx.function)
            if fdef is None or len(tx.args) != len(fdef.params) or not all(
                _type_ok(v, t) for v, t in zip(tx.args, fdef.params)
            ):
                reason = "unknown function" if fdef is None else "bad arguments"
                return failed("Reverted", reason, 1, one_step_fee)
            if tx.function in contract.restricted and not world_state.is_granted(
                tx.sender, tx.target, tx.function
            ):
                return failed("Unauthorized", f"{tx.function} is restricted", 1, one_step_fee)
            value = run_guarded_commands(fdef, list(tx.args), storage, tx.sender,
                                         block_ctx.height, meter, events)
    except _OutOfGas:
        return failed("OutOfGas", "fee budget exhausted", meter.steps, tx.max_fee)
    except _Revert as r:
        return failed("Reverted", r.reason, meter.steps, meter.fee)

    new_storage = dict(world_state.storage)
    new_storage[tx.target] = storage
    new_state = WorldState(world_state.contracts, new_storage, world_state.is_granted)
    return ExecutionResult(new_state, events, meter.steps, meter.fee, Outcome("Returned", value))


# --------------------------------------------------------------------------
# native contracts
# --------------------------------------------------------------------------

class NativeContract:
    """Built-in contract implemented in Python, addressed by a reserved descriptor digest."""

    descriptor: dict = {}

    @property
    def address(self) -> str:
        return digest_obj(self.descriptor)

    def execute(self, tx, storage, height, meter, events, world_state):
        raise NotImplementedError


class NameService(NativeContract):
    descriptor = {"builtin": "name_service", "version": 1}

    def execute(self, tx, storage, height, meter, events, world_state):
        meter.step()
        if tx.function != "register" or len(tx.args) != 2:
            raise _Revert("unknown function")
        name, target = tx.args
        if not isinstance(name, str) or not isinstance(target, str):
            raise _Revert("bad arguments")
        owner = storage.get(f"name:{name}:owner")
        if owner is not None and owner != tx.sender:
            raise _Revert("NameOwnedByOther")
        if target not in world_state.contracts:
            raise _Revert("UnknownContract")
        meter.step()
        storage[f"name:{name}:owner"] = tx.sender
        storage[f"name:{name}:address"] = target
        meter.step()
        events.append((EventKind.CONTRACT_STATE, "NameRegistered",
                       {"name": name, "address": target, "owner": tx.sender}))
        return target


NAME_SERVICE = NameService()
NAME_SERVICE_ADDRESS = NAME_SERVICE.address


# --------------------------------------------------------------------------
# node-facing operations
# --------------------------------------------------------------------------

def deploy_contract(node, definition: ContractDefinition | dict, deployer_account,
                    max_fee: int = 0) -> str:
    """Install a contract at the digest of its canonical document.

    The deployment is also recorded on chain as a zero-fee system transaction
    signed by the deployer.
    """
    if isinstance(definition, dict):
        definition = ContractDefinition.from_document(definition)
    else:
        validate_definition(definition)
    node.registry.get(deployer_account.address)
    address = definition.address
    if address in node.contracts:
        raise ContractExists(address)
    definition.deployer = deployer_account.address
    node.install_contract(address, definition, deployer_account.address)
    tx = build_transaction(deployer_account, address, DEPLOY_FUNCTION, [], max_fee,
                           node.next_nonce(deployer_account.address))
    node.submit_transaction(tx)
    return address


def register_name(node, name: str, address: str, owner_account, max_fee: int | None = None):
    if address not in node.contracts:
        raise UnknownContract(address)
    owner = node.contract_storage(NAME_SERVICE_ADDRESS).get(f"name:{name}:owner")
    if owner is not None and owner != owner_account.address:
        raise NameOwnedByOther(name)
    if max_fee is None:
        max_fee = 3 * node.config.gas_price
    tx = build_transaction(owner_account, NAME_SERVICE_ADDRESS, "register", [name, address],
                           max_fee, node.next_nonce(owner_account.address))
    return node.submit_transaction(tx)


def resolve_name(node, name: str) -> str | None:
    return node.contract_storage(NAME_SERVICE_ADDRESS).get(f"name:{name}:address")
