import inspect
import json

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import add_platform, make_sim
from chainfaas import message_bus
from chainfaas.canonical import canonical_text
from chainfaas.errors import ContractExists, InsufficientFunds, PayloadTooLarge
from chainfaas.message_bus import PlatformRouter, Target, bus_definition, deploy_bus, publish


def _bus(min_conf=1, functions=("logger",)):
    sim = make_sim(accounts=("alice", "bob", "carol"))
    bus = deploy_bus(sim.node, sim.gateway.account("carol"))
    a = add_platform(sim, "A", functions)
    b = add_platform(sim, "B", functions)
    sim.run(1)
    routers = {}
    for p in (a, b):
        routers[p.platform_id] = PlatformRouter(sim.gateway, p, bus, min_conf)
        sim.every(f"router:{p.platform_id}", routers[p.platform_id].route_cycle)
    return sim, bus, a, b, routers


def test_bus_address_is_stable_and_redeploy_fails():
    assert bus_definition().address == bus_definition().address
    assert bus_definition().address == oracles.sha(oracles.canon(bus_definition().to_document()))
    sim = make_sim()
    deploy_bus(sim.node, sim.gateway.account("alice"))
    with pytest.raises(ContractExists):
        deploy_bus(sim.node, sim.gateway.account("bob"))


def test_any_funded_account_may_publish():
    assert bus_definition().restricted == frozenset()
    sim, bus, a, b, _ = _bus()
    h = publish(sim.gateway, "bob", bus, ("B", "logger"), {"x": 1}, source_platform="A")
    sim.run(1)
    assert sim.gateway.outcome(h).ok


def test_publish_emits_one_event_with_sender():
    sim, bus, a, b, _ = _bus()
    publish(sim.gateway, "alice", bus, Target("B", "handleOrder"), {"order": 17},
            source_platform="A")
    sim.run(1)
    (ev,) = sim.gateway.query_past_events({"name": "BusMessage"}, (0, sim.node.tip_height))
    assert ev.kind.value == "Integration"
    assert ev.payload["sender"] == sim.gateway.account("alice").address
    assert json.loads(ev.payload["payload"]) == {"order": 17}


def test_payload_over_cap_rejected_before_submission():
    sim, bus, *_ = _bus()
    with pytest.raises(PayloadTooLarge):
        publish(sim.gateway, "alice", bus, ("B", "logger"), {"blob": "x" * 5000})
    assert len(sim.node.mempool) == 0


def test_publish_insufficient_funds():
    sim, bus, *_ = _bus()
    with pytest.raises(InsufficientFunds):
        publish(sim.gateway, "alice", bus, ("B", "logger"), {}, max_fee=10**9)


def test_two_publishes_in_one_block_keep_tx_order():
    sim, bus, *_ = _bus()
    for i in range(2):
        publish(sim.gateway, "alice", bus, ("B", "logger"), {"i": i})
    sim.run(1)
    evs = sim.gateway.query_past_events({"name": "BusMessage"}, (0, sim.node.tip_height))
    assert [json.loads(e.payload["payload"])["i"] for e in evs] == [0, 1]
    assert len({e.block_height for e in evs}) == 1


def test_delivered_to_target_only_with_attribution():
    sim, bus, a, b, routers = _bus()
    publish(sim.gateway, "alice", bus, ("B", "logger"), {"order": 17}, source_platform="A")
    sim.run(3)
    assert "log" not in a.services
    (got,) = b.services["log"]
    assert got["payload"] == {"order": 17}
    assert got["sender"] == sim.gateway.account("alice").address
    assert got["source_platform"] == "A" and got["attribution_verified"] is True
    assert sim.node.get_transaction(got["tx_id"]).sender == got["sender"]


def test_blocks_four_then_five_delivered_in_order():
    sim, bus, a, b, routers = _bus()
    sim.at(3, lambda: publish(sim.gateway, "alice", bus, ("B", "logger"), {"n": "first"}))
    sim.at(4, lambda: publish(sim.gateway, "bob", bus, ("B", "logger"), {"n": "second"}))
    sim.run(5)
    heights = [r["detail"]["block_height"] for r in sim.trace.of_kind("bus_delivery")]
    assert heights == [4, 5]
    assert [m["payload"]["n"] for m in b.services["log"]] == ["first", "second"]


def test_min_confirmations_gate_delivery():
    sim, bus, a, b, routers = _bus(min_conf=2)
    publish(sim.gateway, "alice", bus, ("B", "logger"), {})
    sim.step()
    assert routers["B"].delivered == []
    sim.step()
    assert len(routers["B"].delivered) == 1


def test_unregistered_target_is_dead_lettered(tmp_path):
    sim, bus, a, b, routers = _bus()
    publish(sim.gateway, "alice", bus, ("B", "missing"), {"x": 1})
    sim.run(3)
    (dl,) = routers["B"].dead_letters
    assert dl["reason"] == "UnknownFunction: missing"
    path = tmp_path / "dead.jsonl"
    routers["B"].export_dead_letters(path)
    assert set(json.loads(path.read_text().splitlines()[0])) == {"message_id", "reason", "tick"}


def test_exactly_once_per_platform():
    sim, bus, a, b, routers = _bus()
    publish(sim.gateway, "alice", bus, ("B", "logger"), {})
    sim.run(6)
    assert routers["B"].route_cycle() == 0
    assert len(b.services["log"]) == 1


def test_no_direct_platform_channel():
    # routers only read the event log; nothing in the module hands one platform to another
    params = inspect.signature(PlatformRouter.__init__).parameters
    assert [p for p in params if p != "self"] == ["gateway", "platform", "bus_address",
                                                  "min_confirmations", "trace"]
    ops = {n for n, f in vars(message_bus).items() if inspect.isfunction(f)
           and f.__module__ == message_bus.__name__}
    assert ops == {"bus_definition", "deploy_bus", "publish", "route_cycle"}


payloads = st.dictionaries(st.text(min_size=1, max_size=8),
                           st.one_of(st.integers(-10**6, 10**6), st.text(max_size=10),
                                     st.booleans()), max_size=5)


@settings(max_examples=25, deadline=None)
@given(st.lists(payloads, min_size=1, max_size=4))
def test_payload_integrity_and_total_order(msgs):
    sim, bus, a, b, routers = _bus()
    for i, m in enumerate(msgs):
        publish(sim.gateway, "alice" if i % 2 else "bob", bus, ("B", "logger"), m)
    sim.run(4)
    got = b.services["log"]
    assert [canonical_text(g["payload"]) for g in got] == [canonical_text(m) for m in msgs]
    assert all(g["attribution_verified"] for g in got)
