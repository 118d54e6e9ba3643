import pytest

import oracles
from conftest import make_sim
from chainfaas.chaintypes import Transaction
from chainfaas.contract_vm import (
    NAME_SERVICE_ADDRESS,
    BlockContext,
    ContractDefinition,
    WorldState,
    arg,
    command,
    deploy_contract,
    emit,
    execute_contract_function,
    function,
    lit,
    op,
    register_name,
    resolve_name,
    return_,
    set_,
    state,
)
from chainfaas.errors import ContractExists, InvalidDefinition, NameOwnedByOther, UnknownContract
from chainfaas.scenario_kit.catalog import counter, token


def _tx(target, fn, args=(), max_fee=100, sender="aa" * 32):
    return Transaction(sender, target, fn, list(args), max_fee, 0, "")


def _run(definition, fn, storage=None, args=(), max_fee=100, gas_price=1, granted=False):
    addr = definition.address
    world = WorldState({addr: definition}, {addr: dict(storage or {})},
                       lambda *a: granted)
    return execute_contract_function(world, _tx(addr, fn, args, max_fee), BlockContext(1, gas_price))


def test_address_is_digest_of_canonical_document():
    c = counter()
    assert c.address == oracles.sha(oracles.canon(c.to_document()))
    assert len(c.address) == 64
    assert ContractDefinition.from_document(c.to_document()).address == c.address


def test_deploy_twice_reports_same_address(sim):
    addr = deploy_contract(sim.node, counter(), sim.gateway.account("alice"))
    with pytest.raises(ContractExists) as exc:
        deploy_contract(sim.node, counter(), sim.gateway.account("bob"))
    assert exc.value.address == addr


def test_duplicate_function_names_invalid():
    f = function("f", [], command(lit(True), return_(lit(1))))
    with pytest.raises(InvalidDefinition):
        ContractDefinition.from_document({"functions": [f, f]})


@pytest.mark.parametrize("doc", [
    {"functions": []},
    {"functions": [function("f", [], command(lit(1), return_(lit(1))))], "extra": 1},
    {"functions": [function("f", [], command({"arg": 0}, return_(lit(1))))]},
    {"functions": [function("f", [], command({"op": "**", "args": []}))]},
    {"functions": [function("f", [], command(lit(True), {"call": "x"}))]},
    {"functions": [function("f", [], command(lit(True), emit("Consensus", "X")))]},
    {"functions": [function("__f", [], command(lit(True)))]},
])
def test_malformed_documents(doc):
    with pytest.raises(InvalidDefinition):
        ContractDefinition.from_document(doc)


def test_counter_inc_matches_hand_evaluation():
    expected_state, expected_events, steps, fee = oracles.counter_inc_by_hand(0, gas_price=2)
    res = _run(counter(), "inc", {"count": 0}, gas_price=2)
    assert res.outcome.kind == "Returned"
    assert res.new_state.storage[counter().address] == expected_state
    assert [(k.value, n, p) for k, n, p in res.events] == expected_events
    assert res.steps == steps == 3
    assert res.fee_charged == fee == 6


def test_out_of_gas_charges_max_fee_and_keeps_state():
    res = _run(counter(), "inc", {"count": 0}, max_fee=2, gas_price=1)
    assert res.outcome.kind == "OutOfGas"
    assert res.fee_charged == 2
    assert res.new_state.storage[counter().address] == {"count": 0}
    assert res.events == []


def test_unauthorized_costs_one_step():
    t = token()
    res = _run(t, "mint", {}, args=["bob", 5], gas_price=3)
    assert res.outcome.kind == "Unauthorized"
    assert res.fee_charged == 3
    assert res.new_state.storage[t.address] == {}


def test_revert_charges_executed_steps():
    res = _run(counter(), "add", {"count": 0}, args=[-1])
    assert res.outcome.kind == "Reverted"
    assert res.outcome.reason == "negative increment"
    assert res.steps == 2 and res.fee_charged == 2


def test_no_guard_matched_reverts():
    c = ContractDefinition.from_document({"functions": [
        function("f", ["int"], command(op("==", arg(0), lit(1)), return_(lit("one"))))]})
    assert _run(c, "f", args=[1]).outcome.value == "one"
    res = _run(c, "f", args=[2])
    assert res.outcome.kind == "Reverted" and res.outcome.reason == "no guard matched"


def test_overflow_reverts():
    c = ContractDefinition.from_document({"functions": [
        function("f", ["int"], command(lit(True), return_(op("+", arg(0), lit(1)))))]})
    assert _run(c, "f", args=[2**63 - 1]).outcome.kind == "Reverted"


def test_type_strict_equality_and_concat():
    c = ContractDefinition.from_document({"functions": [
        function("f", [], command(op("==", lit(1), lit(True)), return_(lit("eq"))),
                 command(lit(True), return_(op("concat", lit("x"), lit(1), lit(False)))))]})
    assert _run(c, "f").outcome.value == "x1false"


def test_bad_arguments_are_dispatch_failures():
    res = _run(counter(), "add", args=["one"])
    assert res.outcome.kind == "Reverted" and res.steps == 1
    res = _run(counter(), "missing")
    assert res.outcome.kind == "Reverted" and res.fee_charged == 1


def test_execution_is_deterministic():
    t = token()
    a = _run(t, "mint", {}, args=["bob", 5], granted=True)
    b = _run(t, "mint", {}, args=["bob", 5], granted=True)
    assert (a.new_state.storage, a.events, a.steps) == (b.new_state.storage, b.events, b.steps)


def _v2():
    doc = counter().to_document()
    doc["functions"].append(function("version", [], command(lit(True), return_(lit(2)))))
    return ContractDefinition.from_document(doc)


def test_name_service_repoint():
    sim = make_sim()
    alice = sim.gateway.account("alice")
    v1 = deploy_contract(sim.node, counter(), alice)
    register_name(sim.node, "counter", v1, alice)
    sim.run(1)
    assert resolve_name(sim.node, "counter") == v1
    v2 = deploy_contract(sim.node, _v2(), alice)
    assert v2 != v1
    register_name(sim.node, "counter", v2, alice)
    sim.run(1)
    assert resolve_name(sim.node, "counter") == v2
    h = sim.gateway.invoke("alice", "counter", "inc", [], 10)
    assert sim.node.get_transaction(h.tx_id).target == v2


def test_name_owned_by_other_and_unknown_contract():
    sim = make_sim()
    alice, bob = sim.gateway.account("alice"), sim.gateway.account("bob")
    v1 = deploy_contract(sim.node, counter(), alice)
    register_name(sim.node, "counter", v1, alice)
    sim.run(1)
    with pytest.raises(NameOwnedByOther):
        register_name(sim.node, "counter", v1, bob)
    with pytest.raises(UnknownContract):
        register_name(sim.node, "other", "12" * 32, alice)
    assert resolve_name(sim.node, "nobody") is None


def test_name_service_address_is_digest_of_descriptor():
    assert NAME_SERVICE_ADDRESS == oracles.sha(oracles.canon({"builtin": "name_service",
                                                               "version": 1}))


def test_deploy_is_a_signed_system_tx_on_chain():
    sim = make_sim(balance=0)
    addr = deploy_contract(sim.node, counter(), sim.gateway.account("alice"))
    block = sim.node.consensus_tick()
    (tx,) = block.transactions
    assert tx.function == "__deploy__" and tx.target == addr
    assert block.receipts[0]["fee"] == 0
    assert sim.registry.verify_signature(tx.sender, tx.body_bytes(), tx.signature)


def test_isolation_expression_inputs_are_closed():
    # anything outside literals, args, state, sender and height is rejected
    for bad in ({"env": "HOME"}, {"time": 1}, {"call": "other"}):
        with pytest.raises(InvalidDefinition):
            ContractDefinition.from_document({"functions": [
                function("f", [], command(lit(True), set_("k", bad)))]})


def test_state_default_and_keys():
    c = ContractDefinition.from_document({"functions": [
        function("f", ["str"], command(lit(True),
                                       set_(op("concat", lit("k:"), arg(0)), lit(1)),
                                       return_(state(op("concat", lit("k:"), arg(0))))))]})
    res = _run(c, "f", args=["a"])
    assert res.outcome.value == 1
    assert res.new_state.storage[c.address] == {"k:a": 1}
