"""Scenario configuration documents and their validation against the matrix.

A config is a JSON document. Top-level keys::

    scenario   one of the ScenarioId values
    ticks      default run length (CLI --ticks overrides)
    chain      ChainConfig fields
    accounts   [{alias, seed?, balance}]
    reader     alias whose credential the gateway uses for event reads
    contracts  [{name, template | document, deployer, register_name?}]
    platforms  [{id, functions: [{id, handler, params?, max_duration?, price?}],
                 bindings: [{id, filter, function, min_confirmations?}],
                 poll_timer?: {period}, timers?: [{function, period}],
                 router?: {bus, min_confirmations?}}]
    oracle     {account, k?, endpoints: [{name, url, method, procedure, params?}]}
    bus        {name, deployer}
    workflows  [{definition, mode: offchain | onchain, account, platform?}]
    actions    [{tick, type, ...}]
    pricing    {fee_unit_ether?, ether_usd?, faas_price_usd?}
    flags      {native_cryptocurrency?, contracts_pass_control_back?,
                process_engine_needs_account?, native_integration?}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..contract_vm import validate_document
from ..errors import ChainFaasError, InvalidDefinition, ParseError
from ..ledger import ChainConfig
from ..orchestration import ContractCall, WorkflowDefinition, validate_workflow
from .catalog import CONTRACTS, ENDPOINTS, HANDLERS
from .requirements import Capability, ScenarioId, required_capabilities, scenario_id

ACTION_TYPES = {"invoke", "publish", "invoke_function", "start_workflow"}


@dataclass
class ScenarioConfig:
    scenario: ScenarioId
    chain: ChainConfig
    raw: dict
    ticks: int = 20
    accounts: list[dict] = field(default_factory=list)
    contracts: list[dict] = field(default_factory=list)
    platforms: list[dict] = field(default_factory=list)
    oracle: dict | None = None
    bus: dict | None = None
    workflows: list[dict] = field(default_factory=list)
    actions: list[dict] = field(default_factory=list)
    pricing: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    reader: str | None = None

    def with_seed(self, seed: int) -> "ScenarioConfig":
        raw = json.loads(json.dumps(self.raw))
        raw.setdefault("chain", {})["rng_seed"] = seed
        return parse_config(raw)

    def flag(self, name: str) -> bool:
        defaults = {
            "native_cryptocurrency": self.chain.gas_price > 0,
            "contracts_pass_control_back": any(p.get("bindings") for p in self.platforms),
            "process_engine_needs_account": True,
            "native_integration": False,
        }
        return bool(self.flags.get(name, defaults[name]))

    def balances(self) -> dict[str, int]:
        return {a["alias"]: int(a.get("balance", 0)) for a in self.accounts}


def parse_config(doc: dict | str | Path) -> ScenarioConfig:
    if isinstance(doc, (str, Path)):
        try:
            doc = json.loads(Path(doc).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read config: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object")
    try:
        sid = scenario_id(doc["scenario"])
        chain = ChainConfig.from_dict(doc.get("chain", {}))
    except KeyError:
        raise ParseError("config needs a 'scenario'") from None
    except (ValueError, TypeError) as exc:
        raise ParseError(str(exc)) from None
    for key in ("accounts", "contracts", "platforms", "workflows", "actions"):
        if not isinstance(doc.get(key, []), list):
            raise ParseError(f"'{key}' must be a list")
    cfg = ScenarioConfig(
        scenario=sid, chain=chain, raw=doc, ticks=int(doc.get("ticks", 20)),
        accounts=list(doc.get("accounts", [])), contracts=list(doc.get("contracts", [])),
        platforms=list(doc.get("platforms", [])), oracle=doc.get("oracle"),
        bus=doc.get("bus"), workflows=list(doc.get("workflows", [])),
        actions=list(doc.get("actions", [])), pricing=dict(doc.get("pricing", {})),
        flags=dict(doc.get("flags", {})), reader=doc.get("reader"),
    )
    _check_references(cfg)
    return cfg


def _check_references(cfg: ScenarioConfig) -> None:
    aliases = set()
    for a in cfg.accounts:
        if "alias" not in a:
            raise ParseError("every account needs an alias")
        if a["alias"] in aliases:
            raise ParseError(f"duplicate account alias {a['alias']!r}")
        aliases.add(a["alias"])

    def known(alias, where):
        if alias not in aliases:
            raise ParseError(f"{where}: unknown account {alias!r}")

    if cfg.reader is not None:
        known(cfg.reader, "reader")
    names = set()
    for c in cfg.contracts:
        if "name" not in c or ("template" in c) == ("document" in c):
            raise ParseError("contract needs a name and exactly one of template/document")
        if "template" in c and c["template"] not in CONTRACTS:
            raise ParseError(f"unknown contract template {c['template']!r}")
        known(c.get("deployer"), f"contract {c['name']}")
        names.add(c["name"])
    if cfg.bus is not None:
        known(cfg.bus.get("deployer"), "bus")
        names.add(cfg.bus.get("name", "bus"))
    pids = set()
    for p in cfg.platforms:
        if "id" not in p:
            raise ParseError("every platform needs an id")
        pids.add(p["id"])
        fids = set()
        for f in p.get("functions", []):
            if f.get("handler") not in HANDLERS:
                raise ParseError(f"{p['id']}/{f.get('id')}: unknown handler {f.get('handler')!r}")
            fids.add(f["id"])
            for key in ("account",):
                if key in f.get("params", {}):
                    known(f["params"][key], f"{p['id']}/{f['id']}")
        for b in p.get("bindings", []):
            if b.get("function") not in fids:
                raise ParseError(f"binding {b.get('id')}: unknown function {b.get('function')!r}")
        for t in p.get("timers", []):
            if t.get("function") not in fids:
                raise ParseError(f"timer on {p['id']}: unknown function {t.get('function')!r}")
        router = p.get("router")
        if router is not None and router.get("bus") not in names:
            raise ParseError(f"router on {p['id']}: unknown bus {router.get('bus')!r}")
    if cfg.oracle is not None:
        known(cfg.oracle.get("account"), "oracle")
        for e in cfg.oracle.get("endpoints", []):
            if e.get("procedure") not in ENDPOINTS:
                raise ParseError(f"endpoint {e.get('name')}: unknown procedure")
    wids = set()
    for w in cfg.workflows:
        try:
            wf = WorkflowDefinition.from_document(w["definition"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad workflow definition: {exc}") from None
        if w.get("mode", "offchain") not in ("offchain", "onchain"):
            raise ParseError(f"workflow {wf.workflow_id}: mode must be offchain or onchain")
        known(w.get("account"), f"workflow {wf.workflow_id}")
        wids.add(wf.workflow_id)
    for i, act in enumerate(cfg.actions):
        where = f"actions[{i}]"
        if act.get("type") not in ACTION_TYPES:
            raise ParseError(f"{where}: unknown action type {act.get('type')!r}")
        if not isinstance(act.get("tick"), int) or act["tick"] < 1:
            raise ParseError(f"{where}: tick must be a positive integer")
        if "account" in act:
            known(act["account"], where)
        if act["type"] == "invoke" and act.get("contract") not in names:
            raise ParseError(f"{where}: unknown contract {act.get('contract')!r}")
        if act["type"] == "invoke_function" and act.get("platform") not in pids:
            raise ParseError(f"{where}: unknown platform {act.get('platform')!r}")
        if act["type"] == "start_workflow" and act.get("workflow") not in wids:
            raise ParseError(f"{where}: unknown workflow {act.get('workflow')!r}")


# --------------------------------------------------------------------------
# requirement checks
# --------------------------------------------------------------------------

def _applies(cfg: ScenarioConfig, cap: Capability) -> bool:
    """Whether a conditional cell is in force for this config."""
    for n in cap.notes:
        if n == 1 and not cfg.chain.reads_require_auth:
            return False
        if n == 2 and not cfg.flag("process_engine_needs_account"):
            return False
        if n == 3 and not cfg.flag("native_cryptocurrency"):
            return False
        if n == 4:
            return False  # non-functional: informs trust, never a gap
        if n == 5 and not cfg.flag("contracts_pass_control_back"):
            return False
        if n == 6 and cfg.flag("native_integration"):
            return False
    return True


def _submitters(cfg: ScenarioConfig) -> set[str]:
    out = {a["account"] for a in cfg.actions if a["type"] in ("invoke", "publish", "start_workflow")}
    for p in cfg.platforms:
        for f in p.get("functions", []):
            if "account" in f.get("params", {}):
                out.add(f["params"]["account"])
    for w in cfg.workflows:
        out.add(w["account"])
    if cfg.oracle is not None:
        out.add(cfg.oracle["account"])
    return out


def _durability_ks(cfg: ScenarioConfig) -> list[tuple[str, int]]:
    ks = []
    for a in cfg.actions:
        if "mode" in a and a["mode"].get("kind") == "AwaitDurability":
            ks.append((f"action at tick {a['tick']}", int(a["mode"]["k"])))
    for p in cfg.platforms:
        for f in p.get("functions", []):
            if f.get("handler") == "invoke_contract" and "k" in f.get("params", {}):
                ks.append((f"{p['id']}/{f['id']}", int(f["params"]["k"])))
        if p.get("router"):
            ks.append((f"router on {p['id']}", int(p["router"].get("min_confirmations", 1))))
    for w in cfg.workflows:
        wf = WorkflowDefinition.from_document(w["definition"])
        for i, s in enumerate(wf.steps):
            if isinstance(s, ContractCall):
                ks.append((f"{wf.workflow_id}[{i}]", s.k))
    if cfg.oracle is not None:
        ks.append(("oracle", int(cfg.oracle.get("k", cfg.chain.max_reorg_depth + 1))))
    return ks


def _check(cfg: ScenarioConfig, rid: str) -> str | None:
    """Return an explanation when no configured mechanism provides ``rid``."""
    sid = cfg.scenario
    R = cfg.chain.max_reorg_depth
    balances = cfg.balances()
    if rid == "A1":
        return None if "chain" in cfg.raw else "no blockchain node configured"
    if rid == "A2":
        if sid == ScenarioId.S1_EventEmitter:
            return None if cfg.reader else "event log needs an authorized reader account"
        if not _submitters(cfg):
            return "no account is configured to sign transactions"
        return None
    if rid == "A3":
        broke = sorted(a for a in _submitters(cfg) if balances.get(a, 0) <= 0)
        if broke:
            return f"accounts without funds for fees: {', '.join(broke)}"
        return None
    if rid == "A4":
        if len(cfg.platforms) < 2:
            return "integration needs at least two platforms reaching the shared chain"
        return None
    if rid == "B1":
        if sid in (ScenarioId.S3b_OnChainEngine, ScenarioId.S4_ProcessManager):
            return None if cfg.oracle else "no oracle subscribed to request events"
        if sid == ScenarioId.S4_MessageBus:
            if any(p.get("router") for p in cfg.platforms):
                return None
            return "no platform routes bus events"
        if sid == ScenarioId.S3a_OrchSteps and any(
                "EventWait" == s.get("type") for w in cfg.workflows
                for s in w["definition"]["steps"]):
            return None
        for p in cfg.platforms:
            if p.get("bindings") and (p.get("poll_timer") is not None):
                return None
        return "needs at least one event binding and a poll timer on the same platform"
    if rid == "B2":
        if any(a["type"] in ("invoke", "publish", "start_workflow") for a in cfg.actions):
            return None
        if any(f.get("handler") in ("invoke_contract", "publish")
               for p in cfg.platforms for f in p.get("functions", [])):
            return None
        if any(isinstance(s, ContractCall) for w in cfg.workflows
               for s in WorkflowDefinition.from_document(w["definition"]).steps):
            return None
        return "nothing invokes a smart contract"
    if rid == "B3":
        ks = _durability_ks(cfg)
        weak = [f"{where} (K={k})" for where, k in ks if k <= R]
        if weak:
            return f"durability K must exceed max reorg depth {R}: {', '.join(weak)}"
        if not ks:
            return "no invocation waits for durability"
        return None
    if rid == "B4":
        if cfg.oracle is None or "endpoints" not in cfg.oracle:
            return "no oracle endpoint table"
        return None
    if rid == "C1":
        for c in cfg.contracts:
            if "document" in c:
                try:
                    validate_document(c["document"])
                except InvalidDefinition as exc:
                    return f"contract {c['name']} does not validate: {exc}"
        return None if cfg.contracts else "no smart contract to develop"
    if rid == "C2":
        if sid == ScenarioId.S3b_OnChainEngine:
            if any(w.get("mode") == "onchain" for w in cfg.workflows):
                return None
            return "no workflow compiled and deployed on chain"
        return None if cfg.contracts or cfg.bus else "no contract deployment configured"
    raise AssertionError(rid)


def validate_scenario_config(config: ScenarioConfig | dict | str | Path):
    """Return ``"OK"`` or a list of ``(requirement, explanation)`` gaps."""
    cfg = config if isinstance(config, ScenarioConfig) else parse_config(config)
    gaps: list[tuple[str, str]] = []
    for cap in sorted(required_capabilities(cfg.scenario), key=lambda c: c.requirement):
        if not _applies(cfg, cap):
            continue
        why = _check(cfg, cap.requirement)
        if why is not None:
            gaps.append((cap.requirement, why))
    for w in cfg.workflows:
        try:
            validate_workflow(WorkflowDefinition.from_document(w["definition"]))
        except ChainFaasError as exc:
            gaps.append(("B2" if w.get("mode") == "offchain" else "C2",
                         f"workflow invalid: {type(exc).__name__}: {exc}"))
    return "OK" if not gaps else gaps
