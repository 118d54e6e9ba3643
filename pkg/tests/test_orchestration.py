import json

import pytest

from conftest import FIXTURES, add_platform, make_sim, with_counter
from chainfaas.errors import (
    CyclicSteps,
    InvalidDefinition,
    UnboundVariable,
    UnknownContract,
    UnknownFunction,
    UnsupportedStep,
    Unauthorized,
)
from chainfaas.orchestration import (
    Choice,
    ContractCall,
    EventWait,
    FunctionCall,
    WorkflowDefinition,
    WorkflowEngine,
    WorkflowRegistry,
    advance_onchain_instance,
    compile_workflow_to_contract,
    deploy_workflow_engine,
    export_instance_trace,
    install_engine_endpoints,
    onchain_outcomes,
    start_onchain_instance,
    validate_workflow,
    var,
)
from chainfaas.trace import read_trace


def _echo_inc_echo(addr):
    return WorkflowDefinition("echo-inc-echo", [
        FunctionCall("P1", "echo", {"x": var("x")}, "a", "x"),
        ContractCall(addr, "inc", [], 1, "c"),
        FunctionCall("P1", "echo", {"y": var("a")}, "b"),
    ], ["x"])


def _offchain(seed=7, functions=("echo",)):
    sim = make_sim(seed=seed)
    addr = with_counter(sim)
    add_platform(sim, "P1", functions)
    return sim, addr, WorkflowEngine(sim, "alice")


def test_three_step_trace_matches_frozen_fixture(tmp_path):
    sim, addr, eng = _offchain()
    eng.define_workflow(_echo_inc_echo(addr))
    inst = eng.run_workflow("echo-inc-echo", {"x": 5})
    expected = json.loads((FIXTURES / "workflow_echo_inc_echo_p0.json").read_text())
    assert inst.status == expected["status"]
    assert [list(t) for t in inst.trace] == expected["trace"]
    path = tmp_path / "inst.jsonl"
    export_instance_trace([inst], path)
    assert [(r["step"], r["tick"]) for r in read_trace(path)] == [(0, 1), (1, 3), (2, 4)]


def test_reverting_contract_step_fails_at_its_index():
    sim, addr, eng = _offchain()
    eng.define_workflow(WorkflowDefinition("w", [
        FunctionCall("P1", "echo", {}, None),
        ContractCall(addr, "fail", [], 1),
        FunctionCall("P1", "echo", {}, None),
    ]))
    inst = eng.run_workflow("w", {})
    assert inst.status == "failed"
    assert inst.error.index == 1 and "always fails" in inst.error.cause
    assert [s for s, _ in inst.outcomes()] == [0]


def test_timeout_step_fails():
    sim, addr, eng = _offchain(functions=("echo", "sleep"))
    sim.platforms["P1"].functions["sleep"].max_duration = 1
    eng.define_workflow(WorkflowDefinition("w", [
        FunctionCall("P1", "sleep", {"ticks": {"lit": 2}})]))
    inst = eng.run_workflow("w", {})
    assert inst.status == "failed" and inst.error.cause.startswith("Timeout")


def test_event_wait_resumes_after_delivery():
    sim, addr, eng = _offchain()
    eng.define_workflow(WorkflowDefinition("w", [
        EventWait({"name": "CountChanged"}, "ev", min_confirmations=2)]))
    sim.add_poller("P1")
    inst = eng.start("w", {})
    sim.run(1)  # installs the subscription
    sim.at(3, lambda: sim.gateway.invoke("bob", addr, "inc", [], 10))
    sim.run_until(lambda: inst.done, 20)
    assert inst.status == "completed"
    emitted = next(r["tick"] for r in sim.trace.of_kind("tx_executed")
                   if r["detail"]["function"] == "inc")
    (_, outcome, resumed) = inst.trace[0]
    assert json.loads(outcome) == {"name": "CountChanged", "payload": {"value": 1}}
    # one extra block for min_confirmations 2, then the engine picks it up
    assert resumed >= emitted + 1
    assert (emitted, resumed) == (4, 5)


def test_choice_follows_condition():
    sim, addr, eng = _offchain(functions=("echo", "double"))
    eng.define_workflow(WorkflowDefinition("w", [
        Choice({"op": "<", "args": [{"lit": 3}, var("n")]}, 1, 2),
        FunctionCall("P1", "double", {"x": var("n")}, "r", "value"),
        FunctionCall("P1", "echo", {"n": var("n")}, "r2", "n"),
    ], ["n"]))
    big = eng.run_workflow("w", {"n": 5})
    small = eng.run_workflow("w", {"n": 1})
    assert big.outcomes() == [(0, "then"), (1, 10), (2, 5)]
    assert small.outcomes() == [(0, "else"), (2, 1)]


@pytest.mark.parametrize("steps,err", [
    ([Choice({"lit": True}, 0, 0)], CyclicSteps),
    ([Choice({"lit": True}, 5, 5)], InvalidDefinition),
    ([FunctionCall("P1", "missing", {})], UnknownFunction),
    ([ContractCall("ab" * 32, "inc", [])], UnknownContract),
    ([FunctionCall("P1", "echo", {"x": var("nope")})], UnboundVariable),
    ([ContractCall("ab" * 32, "inc", [], k=0)], InvalidDefinition),
    ([EventWait({})], InvalidDefinition),
])
def test_define_errors(steps, err):
    sim = make_sim()
    add_platform(sim, "P1", ("echo",))
    with pytest.raises(err):
        WorkflowRegistry(sim.platforms, sim.node).define_workflow(WorkflowDefinition("w", steps))


def test_unsupported_step_type():
    with pytest.raises(UnsupportedStep):
        WorkflowDefinition.from_document({"workflow_id": "w", "steps": [{"type": "Parallel"}]})


def test_document_roundtrip():
    wf = _echo_inc_echo("ab" * 32)
    again = WorkflowDefinition.from_document(json.loads(json.dumps(wf.to_document())))
    assert again.canonical() == wf.canonical()
    validate_workflow(wf)


# -- on-chain engine ---------------------------------------------------------

def test_compile_is_deterministic():
    wf = _echo_inc_echo("ab" * 32)
    a, b = compile_workflow_to_contract(wf), compile_workflow_to_contract(wf.to_document())
    assert a.canonical() == b.canonical()
    assert a.address == b.address


def test_choice_compiles_to_complementary_guards():
    wf = WorkflowDefinition("w", [Choice({"op": "==", "args": [var("n"), {"lit": 1}]}, 1, 1),
                                  FunctionCall("P1", "echo", {})], ["n"])
    doc = compile_workflow_to_contract(wf).to_document()
    advance = next(f for f in doc["functions"] if f["name"] == "advance")
    guards = [c["guard"] for c in advance["body"]]
    at0 = [g for g in guards if g.get("op") == "and" and g["args"][0]["args"][1] == {"lit": 0}]
    assert len(at0) == 2
    assert at0[1]["args"][1] == {"op": "not", "args": [at0[0]["args"][1]]}


def _linear_engine():
    sim = make_sim()
    wf = WorkflowDefinition("two", [FunctionCall("P1", "echo", {}), FunctionCall("P1", "echo", {})])
    oracle = sim.gateway.account("bob")
    addr = deploy_workflow_engine(sim.node, wf, oracle)
    sim.gateway.oracle_account = "bob"
    sim.run(1)
    return sim, wf, addr


def test_advance_from_step_zero_sets_next_step():
    sim, wf, addr = _linear_engine()
    start_onchain_instance(sim.gateway, "alice", addr, "i1", wf, {})
    sim.run(1)
    advance_onchain_instance(sim.gateway, addr, "i1", "r0")
    sim.run(1)
    assert sim.node.contract_storage(addr)["inst:i1:step"] == 1
    assert onchain_outcomes(sim.node, addr, "i1") == [(0, "r0")]


def test_advance_after_final_step_reverts():
    sim, wf, addr = _linear_engine()
    start_onchain_instance(sim.gateway, "alice", addr, "i1", wf, {})
    sim.run(1)
    for r in ("r0", "r1"):
        advance_onchain_instance(sim.gateway, addr, "i1", r)
    sim.run(1)
    h = advance_onchain_instance(sim.gateway, addr, "i1", "r2")
    sim.run(1)
    out = sim.gateway.outcome(h)
    assert out.kind == "Reverted" and out.reason == "already complete"


def test_unauthorized_advance():
    sim, wf, addr = _linear_engine()
    start_onchain_instance(sim.gateway, "alice", addr, "i1", wf, {})
    sim.run(1)
    with pytest.raises(Unauthorized):
        advance_onchain_instance(sim.gateway, addr, "i1", "x", account="alice")
    # a grant revoked between submission and execution shows up on chain
    bob, alice = sim.gateway.account("bob"), sim.gateway.account("alice")
    sim.registry.set_permission(bob.address, alice.address, addr, "advance", True)
    h = advance_onchain_instance(sim.gateway, addr, "i1", "x", account="alice")
    sim.registry.set_permission(bob.address, alice.address, addr, "advance", False)
    sim.run(1)
    assert sim.gateway.outcome(h).kind == "Unauthorized"
    assert sim.node.contract_storage(addr)["inst:i1:step"] == 0


def test_oracle_driven_two_step_run_has_start_plus_two_advances():
    sim = make_sim(oracle=True, accounts=("alice", "oracle"), oracle_account="oracle")
    add_platform(sim, "P1", ("echo",))
    install_engine_endpoints(sim.gateway, sim.platforms, "alice")
    wf = WorkflowDefinition("two", [FunctionCall("P1", "echo", {"x": var("x")}, "a", "x"),
                                    FunctionCall("P1", "echo", {"y": var("a")}, "b", "y")],
                            ["x"])
    addr = deploy_workflow_engine(sim.node, wf, sim.gateway.account("oracle"))
    sim.run(1)
    start_onchain_instance(sim.gateway, "alice", addr, "i1", wf, {"x": 9})
    sim.run(12)
    calls = [r["detail"]["function"] for r in sim.trace.of_kind("tx_executed")
             if r["detail"]["target"] == addr]
    assert calls == ["__deploy__", "start", "advance", "advance"]
    assert onchain_outcomes(sim.node, addr, "i1") == [(0, 9), (1, 9)]
    names = [e.name for e in sim.gateway.query_past_events({"emitter": addr},
                                                           (0, sim.node.tip_height))]
    assert names[-1] == "WorkflowCompleted"


def test_offchain_and_onchain_traces_agree():
    def definition(addr):
        return WorkflowDefinition("mix", [
            FunctionCall("P1", "double", {"x": var("n")}, "d", "value"),
            ContractCall(addr, "add", [var("d")], 2, "c"),
            Choice({"op": "<", "args": [{"lit": 5}, var("c")]}, 3, 4),
            FunctionCall("P1", "echo", {"big": var("c")}, "r", "big"),
            FunctionCall("P1", "echo", {"end": {"lit": True}}, "e", "end"),
        ], ["n"])

    off, addr, eng = _offchain(functions=("echo", "double"))
    eng.define_workflow(definition(addr))
    inst = eng.run_workflow("mix", {"n": 4})
    assert inst.status == "completed"

    on = make_sim(oracle=True, accounts=("alice", "oracle"), oracle_account="oracle")
    caddr = with_counter(on)
    add_platform(on, "P1", ("echo", "double"))
    install_engine_endpoints(on.gateway, on.platforms, "alice")
    wf = definition(caddr)
    eaddr = deploy_workflow_engine(on.node, wf, on.gateway.account("oracle"))
    on.run(1)
    start_onchain_instance(on.gateway, "alice", eaddr, "i1", wf, {"n": 4})
    on.run(40)
    assert onchain_outcomes(on.node, eaddr, "i1") == inst.outcomes()
