"""Build a simulation from a scenario config, run it, and price the result."""

from __future__ import annotations

from pathlib import Path

from ..errors import ChainFaasError, EmptyTrace, RuntimeFailure, ValidationFailed
from ..faas import FunctionSpec
from ..gateway import EventBinding, Endpoint, Mode
from ..message_bus import PlatformRouter, Target, deploy_bus, publish
from ..orchestration import (
    ContractCall,
    WorkflowDefinition,
    WorkflowEngine,
    deploy_workflow_engine,
    install_engine_endpoints,
    start_onchain_instance,
)
from ..contract_vm import ContractDefinition, deploy_contract, register_name
from ..sim import Simulation
from ..trace import Trace
from .catalog import contract_template, make_endpoint_procedure, make_handler
from .config import ScenarioConfig, parse_config, validate_scenario_config

# Dated conversion constants: 1 ether = 300 USD as of 26 July 2020.
DEFAULT_PRICING = {
    "fee_unit_ether": 1e-7,
    "ether_usd": 300.0,
    "faas_price_usd": 2e-7,
}


def _mode(spec: dict | None) -> Mode | None:
    if not spec:
        return None
    if spec.get("kind") == "AwaitDurability":
        return Mode.await_durability(int(spec["k"]))
    return Mode.fire_and_forget()


class ScenarioRun:
    """Everything built for one run; kept around so tests can inspect it."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        oracle = cfg.oracle or {}
        options = {"reader": cfg.reader, "oracle_account": oracle.get("account")}
        if "k" in oracle:
            options["k_oracle"] = int(oracle["k"])
        self.sim = Simulation(cfg.chain, oracle=cfg.oracle is not None, gateway_options=options)
        self.addresses: dict[str, str] = {}
        self.routers: dict[str, PlatformRouter] = {}
        self.engines: dict[str, WorkflowEngine] = {}
        self.onchain: dict[str, tuple[str, WorkflowDefinition]] = {}
        self._build()

    @property
    def trace(self) -> Trace:
        return self.sim.trace

    def _build(self) -> None:
        cfg, sim = self.cfg, self.sim
        gw = sim.gateway
        for a in cfg.accounts:
            acct = sim.registry.create_account(a.get("seed", a["alias"]))
            if int(a.get("balance", 0)) > 0:
                sim.registry.fund_account(acct.address, int(a["balance"]))
            gw.add_identity(a["alias"], acct)
        for c in cfg.contracts:
            definition = (contract_template(c["template"]) if "template" in c
                          else ContractDefinition.from_document(c["document"]))
            deployer = gw.account(c["deployer"])
            address = deploy_contract(sim.node, definition, deployer)
            self.addresses[c["name"]] = address
            if c.get("register_name", False):
                register_name(sim.node, c["name"], address, deployer)
            for grant in c.get("grants", []):
                sim.registry.set_permission(deployer.address, gw.account(grant["account"]).address,
                                            address, grant["function"], True)
        if cfg.bus is not None:
            name = cfg.bus.get("name", "bus")
            self.addresses[name] = deploy_bus(sim.node, gw.account(cfg.bus["deployer"]))
        for p in cfg.platforms:
            platform = sim.add_platform(p["id"])
            for f in p.get("functions", []):
                platform.register_function(FunctionSpec(
                    f["id"], make_handler(f["handler"], f.get("params")),
                    int(f.get("max_duration", 10)), int(f.get("price", 1))))
            if cfg.bus is not None:
                platform.services["bus_address"] = self.addresses[cfg.bus.get("name", "bus")]
        if cfg.oracle is not None:
            for e in cfg.oracle.get("endpoints", []):
                gw.add_endpoint(Endpoint(e["name"], e.get("url", ""), e.get("method", "POST"),
                                         make_endpoint_procedure(e["procedure"], e.get("params"))))
            install_engine_endpoints(gw, sim.platforms, cfg.oracle.get("caller",
                                                                       cfg.oracle["account"]))
        for w in cfg.workflows:
            wf = WorkflowDefinition.from_document(w["definition"])
            for step in wf.steps:
                # config-level contract names map to the addresses deployed above
                if isinstance(step, ContractCall) and step.contract_ref in self.addresses:
                    step.contract_ref = self.addresses[step.contract_ref]
            if w.get("mode", "offchain") == "onchain":
                address = deploy_workflow_engine(sim.node, wf, gw.account(cfg.oracle["account"]))
                self.addresses[wf.workflow_id] = address
                self.onchain[wf.workflow_id] = (address, wf)
            else:
                engine = WorkflowEngine(sim, w["account"], home_platform=w.get("platform"))
                engine.define_workflow(wf)
                self.engines[wf.workflow_id] = engine
        # subscriptions and timers last so that cursors start after deployment
        for p in cfg.platforms:
            platform = sim.platforms[p["id"]]
            for b in p.get("bindings", []):
                gw.subscribe(EventBinding(b["id"], b["filter"], b["function"], p["id"],
                                          int(b.get("min_confirmations", 1))))
            if p.get("poll_timer") is not None:
                sim.add_poller(p["id"], p["poll_timer"].get("period"))
            for t in p.get("timers", []):
                platform.schedule_timer(t["function"], int(t["period"]))
            if p.get("router") is not None:
                router = PlatformRouter(gw, platform, self.addresses[p["router"]["bus"]],
                                        int(p["router"].get("min_confirmations", 1)))
                self.routers[p["id"]] = router
                sim.every(f"router:{p['id']}", router.route_cycle)
        for act in cfg.actions:
            sim.at(act["tick"], self._action(act))

    def _action(self, act: dict):
        gw = self.sim.gateway
        kind = act["type"]

        def run():
            if kind == "invoke":
                gw.invoke(act["account"], self.addresses[act["contract"]], act["function"],
                          act.get("args", []), int(act.get("max_fee", 100)),
                          _mode(act.get("mode")))
            elif kind == "publish":
                publish(gw, act["account"], self.addresses[act.get("bus", "bus")],
                        Target(*act["target"]), act["payload"], int(act.get("max_fee", 100)),
                        act.get("source_platform", ""), mode=_mode(act.get("mode")))
            elif kind == "invoke_function":
                self.sim.platforms[act["platform"]].invoke_function(
                    act["function"], act.get("payload", {}), mode="async")
            else:
                wid = act["workflow"]
                if wid in self.onchain:
                    address, wf = self.onchain[wid]
                    start_onchain_instance(gw, act["account"], address,
                                           act.get("instance_id", f"{wid}-1"), wf,
                                           act.get("inputs", {}))
                else:
                    self.engines[wid].start(wid, act.get("inputs", {}),
                                            act.get("instance_id"))
        return run

    def run(self, ticks: int) -> Trace:
        sim = self.sim
        try:
            sim.run(ticks)
        except ChainFaasError as exc:
            sim.trace.emit("failure", "scenario_kit", {"error": f"{type(exc).__name__}: {exc}"})
            raise RuntimeFailure(str(exc), sim.trace) from exc
        for platform in sim.platforms.values():
            for record in platform.billing_report((0, sim.now)):
                sim.trace.emit("billing", "faas_runtime", record.to_dict())
        sim.trace.emit("run_end", "scenario_kit", {
            "tip": sim.node.tip_height, "tip_hash": sim.node.tip.block_hash,
            "state_digest": sim.node.tip.state_digest,
        })
        return sim.trace


def build_scenario(config, seed: int | None = None) -> ScenarioRun:
    cfg = config if isinstance(config, ScenarioConfig) else parse_config(config)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    verdict = validate_scenario_config(cfg)
    if verdict != "OK":
        raise ValidationFailed(verdict)
    return ScenarioRun(cfg)


def run_scenario(config, seed: int | None = None, ticks: int | None = None,
                 out: str | Path | None = None) -> Trace:
    """Validate, build and run; optionally write the JSON Lines trace to ``out``."""
    run = build_scenario(config, seed)
    try:
        trace = run.run(run.cfg.ticks if ticks is None else ticks)
    except RuntimeFailure as exc:
        if out is not None:
            exc.trace.write(out)
        raise
    if out is not None:
        trace.write(out)
    return trace


def cost_report(trace, pricing: dict | None = None) -> dict:
    """Price on-chain fees and FaaS billing found in a trace.

    ``trace`` may be a :class:`Trace`, a list of records or a JSONL path. Fees of
    executions that were later orphaned were refunded, so they are subtracted.
    """
    if isinstance(trace, Trace):
        records = trace.records
    elif isinstance(trace, (str, Path)):
        from ..trace import read_trace
        records = read_trace(trace)
    else:
        records = list(trace)
    prices = {**DEFAULT_PRICING, **(pricing or {})}
    last_fee: dict[str, int] = {}
    fee_units = 0
    faas_units = 0
    executions = billed = 0
    for r in records:
        d = r["detail"]
        if r["kind"] == "tx_executed":
            fee_units += d["fee"]
            last_fee[d["tx_id"]] = d["fee"]
            executions += 1
        elif r["kind"] == "reorg":
            for tx_id in d["returned_txs"]:
                fee_units -= last_fee.pop(tx_id, 0)
        elif r["kind"] == "billing":
            faas_units += d["cost"]
            billed += d["invocations"]
    if executions == 0 and billed == 0:
        raise EmptyTrace("trace has neither contract executions nor billed invocations")
    onchain = fee_units * prices["fee_unit_ether"] * prices["ether_usd"]
    faas = faas_units * prices["faas_price_usd"]
    if onchain == 0:
        ratio = 0.0
    elif faas == 0:
        ratio = float("inf")
    else:
        ratio = onchain / faas
    return {"onchain_cost_usd": onchain, "faas_cost_usd": faas, "ratio": ratio,
            "fee_units": fee_units, "faas_cost_units": faas_units}
