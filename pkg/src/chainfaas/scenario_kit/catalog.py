"""Named handlers, contract templates and oracle endpoints usable from configs.

Configs refer to behaviour by name so that a scenario file stays plain data.
Handler factories take the declaration's ``params`` map and return a
``handler(payload, ctx)``.
"""

from __future__ import annotations

from typing import Callable

from ..chaintypes import EventKind
from ..contract_vm import (
    ContractDefinition,
    arg,
    command,
    emit,
    function,
    lit,
    op,
    return_,
    revert,
    sender,
    set_,
    state,
)
from ..gateway import Mode
from ..errors import ParseError

# --------------------------------------------------------------------------
# FaaS handlers
# --------------------------------------------------------------------------


def _echo(params):
    def handler(payload, ctx):
        return dict(payload)
    return handler


def _logger(params):
    def handler(payload, ctx):
        seen = ctx.platform.services.setdefault("log", [])
        seen.append(payload)
        return {"logged": len(seen)}
    return handler


def _double(params):
    field_name = params.get("field", "x")

    def handler(payload, ctx):
        return {"value": 2 * int(payload.get(field_name, 0))}
    return handler


def _sleep(params):
    default = int(params.get("ticks", 1))

    def handler(payload, ctx):
        ctx.sleep(int(payload.get("ticks", default)))
        return {"slept": ctx.elapsed}
    return handler


def _const(params):
    value = params.get("value", {})

    def handler(payload, ctx):
        return dict(value) if isinstance(value, dict) else {"value": value}
    return handler


def _fail(params):
    def handler(payload, ctx):
        raise RuntimeError(params.get("message", "handler failure"))
    return handler


def _invoke_contract(params):
    """Serverless function that calls a contract through the gateway."""

    def handler(payload, ctx):
        gw = ctx.services["gateway"]
        mode = None
        if "k" in params:
            mode = Mode.await_durability(int(params["k"]))
        args = payload.get("args", params.get("args", []))
        h = gw.invoke(params["account"], params["contract"], params["function"], args,
                      int(params.get("max_fee", 100)), mode)
        return {"tx_id": h.tx_id, "handle_id": h.handle_id}
    return handler


def _publish(params):
    """Publish the invocation payload to the message bus as the configured account."""

    def handler(payload, ctx):
        from ..message_bus import publish
        gw = ctx.services["gateway"]
        bus = ctx.services["bus_address"]
        body = payload.get("message", payload)
        h = publish(gw, params["account"], bus, (params["target_platform"],
                                                 params["target_function"]),
                    body, int(params.get("max_fee", 100)), ctx.platform_id)
        return {"tx_id": h.tx_id}
    return handler


HANDLERS: dict[str, Callable[[dict], Callable]] = {
    "echo": _echo,
    "logger": _logger,
    "double": _double,
    "sleep": _sleep,
    "const": _const,
    "fail": _fail,
    "invoke_contract": _invoke_contract,
    "publish": _publish,
}


def make_handler(name: str, params: dict | None = None):
    if name not in HANDLERS:
        raise ParseError(f"unknown handler {name!r}")
    return HANDLERS[name](params or {})


# --------------------------------------------------------------------------
# contract templates
# --------------------------------------------------------------------------

def counter() -> ContractDefinition:
    """inc() bumps ``count`` and emits CountChanged; add(n) also returns the new value."""
    count = state("count", 0)
    inc = function("inc", [], command(
        lit(True),
        set_("count", op("+", count, lit(1))),
        emit(EventKind.CONTRACT_STATE, "CountChanged", {"value": count}),
    ))
    add = function("add", ["int"], command(
        op("<", arg(0), lit(0)), revert("negative increment"),
    ), command(
        lit(True),
        set_("count", op("+", count, arg(0))),
        emit(EventKind.CONTRACT_STATE, "CountChanged", {"value": count}),
        return_(count),
    ))
    get = function("get", [], command(lit(True), return_(count)))
    fail = function("fail", [], command(lit(True), revert("always fails")))
    return ContractDefinition.from_document({"functions": [inc, add, get, fail]})


def token() -> ContractDefinition:
    """Minimal fungible token; mint is restricted to granted accounts."""
    bal = lambda who: state(op("concat", lit("bal:"), who), 0)  # noqa: E731
    mint = function("mint", ["str", "int"], command(
        lit(True),
        set_(op("concat", lit("bal:"), arg(0)), op("+", bal(arg(0)), arg(1))),
        emit(EventKind.CONTRACT_STATE, "Minted", {"to": arg(0), "amount": arg(1)}),
    ))
    transfer = function("transfer", ["str", "int"], command(
        op("<", bal(sender()), arg(1)), revert("insufficient token balance"),
    ), command(
        lit(True),
        set_(op("concat", lit("bal:"), sender()), op("-", bal(sender()), arg(1))),
        set_(op("concat", lit("bal:"), arg(0)), op("+", bal(arg(0)), arg(1))),
        emit(EventKind.BUSINESS_LOGIC, "Transfer",
             {"from": sender(), "to": arg(0), "amount": arg(1)}),
    ))
    balance = function("balance", ["str"], command(lit(True), return_(bal(arg(0)))))
    return ContractDefinition.from_document({
        "functions": [mint, transfer, balance], "restricted": ["mint"],
    })


def price_consumer() -> ContractDefinition:
    """request(symbol) asks the oracle for a price; restricted receive() stores it."""
    request = function("request", ["str"], command(
        lit(True),
        emit(EventKind.EXTERNAL_CALL_REQUESTED, "PriceRequested",
             {"endpoint": lit("price"), "cb": lit("receive"), "ref": arg(0),
              "symbol": arg(0)}),
    ))
    receive = function("receive", ["str", "any", "bool"], command(
        op("not", arg(2)),
        emit(EventKind.BUSINESS_LOGIC, "PriceUnavailable", {"symbol": arg(0), "error": arg(1)}),
    ), command(
        lit(True),
        set_(op("concat", lit("price:"), arg(0)), arg(1)),
        emit(EventKind.BUSINESS_LOGIC, "PriceUpdated", {"symbol": arg(0), "price": arg(1)}),
    ))
    return ContractDefinition.from_document({
        "functions": [request, receive], "restricted": ["receive"],
    })


CONTRACTS: dict[str, Callable[[], ContractDefinition]] = {
    "counter": counter,
    "token": token,
    "price_consumer": price_consumer,
}


def contract_template(name: str) -> ContractDefinition:
    if name not in CONTRACTS:
        raise ParseError(f"unknown contract template {name!r}")
    return CONTRACTS[name]()


# --------------------------------------------------------------------------
# oracle endpoint procedures
# --------------------------------------------------------------------------

def _price(params):
    prices = dict(params.get("prices", {"ETH": 300}))

    def procedure(payload, gateway):
        symbol = payload.get("symbol", "")
        if symbol not in prices:
            raise KeyError(f"no price for {symbol!r}")
        return prices[symbol]
    return procedure


def _echo_endpoint(params):
    def procedure(payload, gateway):
        return {k: v for k, v in payload.items() if k not in ("endpoint", "cb", "ref")}
    return procedure


ENDPOINTS = {"price": _price, "echo": _echo_endpoint}


def make_endpoint_procedure(name: str, params: dict | None = None):
    if name not in ENDPOINTS:
        raise ParseError(f"unknown endpoint procedure {name!r}")
    return ENDPOINTS[name](params or {})
