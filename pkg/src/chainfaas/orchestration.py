"""Workflows mixing FaaS calls, contract calls and event waits.

Two execution routes share one definition format:

* :class:`WorkflowEngine` runs instances off-chain, one step per instance per
  tick, using the gateway for contract steps and subscriptions.
* :func:`compile_workflow_to_contract` turns a definition into a
  guarded-command process-engine contract. Every step is requested from the
  oracle with an ``ExternalCallRequested`` event and completed by a restricted
  ``advance`` transaction, so all instance state changes are on chain.

Step values are scalars. A FaaS step yields ``result[select]`` or, without a
selector, the canonical JSON text of the result map; a contract step yields its
return value (``""`` for none); an event wait yields the canonical JSON text of
``{"name", "payload"}`` of the matched event; a choice yields ``"then"`` or
``"else"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .canonical import canonical_bytes, canonical_text
from .chaintypes import ChainEvent, EventKind
from .contract_vm import (
    ContractDefinition,
    _Frame,
    _Revert,
    _check_expr,
    arg,
    command,
    deploy_contract,
    emit,
    function,
    lit,
    op,
    revert,
    set_,
    state,
)
from .errors import (
    ChainFaasError,
    CyclicSteps,
    InvalidDefinition,
    StepFailed,
    Timeout,
    UnboundVariable,
    UnknownContract,
    UnknownFunction,
    UnsupportedStep,
)
from .faas import FunctionSpec
from .gateway import Deferred, Endpoint, EventBinding, EventCursor, Gateway, Mode, to_scalar
from .ledger import EventFilter
from .trace import emit as trace_emit

DEFAULT_VARIABLE_CAP = 4096
NOT_STARTED = -1
FAILED = -2


# --------------------------------------------------------------------------
# definitions
# --------------------------------------------------------------------------

def var(name: str) -> dict:
    return {"var": name}


@dataclass
class FunctionCall:
    platform: str
    function_id: str
    input: dict[str, dict] = field(default_factory=dict)
    output: str | None = None
    select: str | None = None


@dataclass
class ContractCall:
    contract_ref: str
    function: str
    args: list[dict] = field(default_factory=list)
    k: int = 1
    output: str | None = None
    max_fee: int = 100


@dataclass
class EventWait:
    filter: dict
    output: str | None = None
    min_confirmations: int = 1


@dataclass
class Choice:
    condition: dict
    then: int
    else_: int


Step = FunctionCall | ContractCall | EventWait | Choice
_STEP_TYPES = {"FunctionCall": FunctionCall, "ContractCall": ContractCall,
               "EventWait": EventWait, "Choice": Choice}


@dataclass
class WorkflowDefinition:
    workflow_id: str
    steps: list[Step]
    inputs: list[str] = field(default_factory=list)

    def to_document(self) -> dict:
        steps = []
        for s in self.steps:
            d = {k: v for k, v in s.__dict__.items()}
            if isinstance(s, Choice):
                d["else"] = d.pop("else_")
            steps.append({"type": type(s).__name__, **d})
        return {"workflow_id": self.workflow_id, "inputs": list(self.inputs), "steps": steps}

    @classmethod
    def from_document(cls, doc: dict) -> "WorkflowDefinition":
        steps = []
        for raw in doc["steps"]:
            raw = dict(raw)
            kind = raw.pop("type")
            if kind not in _STEP_TYPES:
                raise UnsupportedStep(kind)
            if kind == "Choice":
                raw["else_"] = raw.pop("else")
            steps.append(_STEP_TYPES[kind](**raw))
        return cls(doc["workflow_id"], steps, list(doc.get("inputs", [])))

    def canonical(self) -> bytes:
        return canonical_bytes(self.to_document())


def _expr_vars(e) -> set[str]:
    if isinstance(e, dict):
        if "var" in e:
            return {e["var"]}
        out = set()
        for v in e.values():
            out |= _expr_vars(v)
        return out
    if isinstance(e, list):
        out = set()
        for v in e:
            out |= _expr_vars(v)
        return out
    return set()


def substitute_vars(e, resolve):
    """Replace every ``{"var": name}`` node by ``resolve(name)``."""
    if isinstance(e, dict):
        if "var" in e:
            return resolve(e["var"])
        return {k: substitute_vars(v, resolve) for k, v in e.items()}
    if isinstance(e, list):
        return [substitute_vars(v, resolve) for v in e]
    return e


def _check_ref(ref, where):
    if not isinstance(ref, dict) or len(ref) != 1 or not ({"var", "lit"} & set(ref)):
        raise InvalidDefinition(f"{where}: value must be {{'var': name}} or {{'lit': value}}")


def _step_reads(step: Step) -> set[str]:
    if isinstance(step, FunctionCall):
        return _expr_vars(list(step.input.values()))
    if isinstance(step, ContractCall):
        return _expr_vars(step.args)
    if isinstance(step, Choice):
        return _expr_vars(step.condition)
    return set()


def validate_workflow(definition: WorkflowDefinition, platforms=None, node=None) -> None:
    n = len(definition.steps)
    written = set(definition.inputs)
    for i, step in enumerate(definition.steps):
        where = f"{definition.workflow_id}[{i}]"
        if not isinstance(step, (FunctionCall, ContractCall, EventWait, Choice)):
            raise UnsupportedStep(where)
        if isinstance(step, Choice):
            for target in (step.then, step.else_):
                if not isinstance(target, int) or target <= i:
                    raise CyclicSteps(f"{where}: branch target {target} is not a forward reference")
                if target > n:
                    raise InvalidDefinition(f"{where}: branch target {target} out of range")
            _check_expr(substitute_vars(step.condition, lambda v: lit(0)), where, 0)
        if isinstance(step, FunctionCall):
            for ref in step.input.values():
                _check_ref(ref, where)
            if platforms is not None:
                p = platforms.get(step.platform)
                if p is None or not p.has_function(step.function_id):
                    raise UnknownFunction(f"{where}: {step.platform}/{step.function_id}")
        if isinstance(step, ContractCall):
            for ref in step.args:
                _check_ref(ref, where)
            if step.k < 1:
                raise InvalidDefinition(f"{where}: durability K must be >= 1")
            if node is not None and step.contract_ref not in node.contracts:
                from .contract_vm import resolve_name
                if resolve_name(node, step.contract_ref) is None:
                    raise UnknownContract(f"{where}: {step.contract_ref}")
        if isinstance(step, EventWait):
            if EventFilter.from_dict(step.filter).is_empty():
                raise InvalidDefinition(f"{where}: empty event filter")
        missing = _step_reads(step) - written
        if missing:
            raise UnboundVariable(f"{where}: reads unwritten {sorted(missing)}")
        out = getattr(step, "output", None)
        if out:
            written.add(out)


class WorkflowRegistry:
    def __init__(self, platforms=None, node=None):
        self.platforms = platforms
        self.node = node
        self.workflows: dict[str, WorkflowDefinition] = {}

    def define_workflow(self, definition: WorkflowDefinition | dict) -> str:
        if isinstance(definition, dict):
            definition = WorkflowDefinition.from_document(definition)
        validate_workflow(definition, self.platforms, self.node)
        self.workflows[definition.workflow_id] = definition
        return definition.workflow_id


def define_workflow(registry: WorkflowRegistry, definition) -> str:
    return registry.define_workflow(definition)


# --------------------------------------------------------------------------
# off-chain engine
# --------------------------------------------------------------------------

def select_result(result: dict | None, select: str | None):
    if select is None:
        return to_scalar(result or {})
    return to_scalar((result or {}).get(select))


def event_result(ev: ChainEvent | dict) -> str:
    d = ev.to_dict() if isinstance(ev, ChainEvent) else ev
    return canonical_text({"name": d["name"], "payload": d["payload"]})


def evaluate_condition(condition: dict, variables: dict):
    expr = substitute_vars(condition, lambda v: lit(variables.get(v, 0)))
    return _Frame([], {}, "", 0).eval(expr)


@dataclass
class WorkflowInstance:
    instance_id: str
    workflow_id: str
    variables: dict[str, Any]
    current_step: int = 0
    status: str = "running"  # running | completed | failed
    trace: list[tuple[int, Any, int]] = field(default_factory=list)
    error: StepFailed | None = None
    waiting: Any = None

    @property
    def done(self) -> bool:
        return self.status != "running"

    def outcomes(self) -> list[tuple[int, Any]]:
        return [(i, o) for i, o, _ in self.trace]


class WorkflowEngine:
    """Off-chain orchestrator; registers its periodic task on a :class:`Simulation`."""

    RESUME_PREFIX = "__wf_resume__"

    def __init__(self, sim, account: str, registry: WorkflowRegistry | None = None,
                 home_platform: str | None = None, variable_cap: int = DEFAULT_VARIABLE_CAP):
        self.sim = sim
        self.gateway: Gateway = sim.gateway
        self.account = account
        self.registry = registry or WorkflowRegistry(sim.platforms, sim.node)
        self.home_platform = home_platform
        self.variable_cap = variable_cap
        self.instances: dict[str, WorkflowInstance] = {}
        self._inbox: dict[str, dict] = {}
        self._seq = 0
        sim.every("workflow-engine", self.step)

    def define_workflow(self, definition) -> str:
        return self.registry.define_workflow(definition)

    def start(self, workflow_id: str, inputs: dict, instance_id: str | None = None):
        wf = self.registry.workflows[workflow_id]
        missing = set(wf.inputs) - set(inputs)
        if missing:
            raise UnboundVariable(f"missing workflow inputs {sorted(missing)}")
        self._seq += 1
        inst = WorkflowInstance(instance_id or f"{workflow_id}-{self._seq}", workflow_id,
                                {k: inputs[k] for k in wf.inputs})
        self.instances[inst.instance_id] = inst
        return inst

    def run_workflow(self, workflow_id: str, inputs: dict, max_ticks: int = 1000):
        inst = self.start(workflow_id, inputs)
        self.sim.run_until(lambda: inst.done, max_ticks)
        if not inst.done:
            self._fail(inst, "workflow did not finish within tick budget")
        return inst

    def step(self) -> None:
        for inst in list(self.instances.values()):
            if not inst.done:
                self._advance(inst)

    # each call performs at most one step of the instance
    def _advance(self, inst: WorkflowInstance) -> None:
        wf = self.registry.workflows[inst.workflow_id]
        if inst.current_step >= len(wf.steps):
            inst.status = "completed"
            return
        i = inst.current_step
        step = wf.steps[i]
        try:
            if isinstance(step, FunctionCall):
                self._complete(inst, step, self._function_call(inst, step), i + 1)
            elif isinstance(step, Choice):
                taken = evaluate_condition(step.condition, inst.variables)
                if type(taken) is not bool:
                    raise StepFailed(i, "choice condition is not boolean")
                self._complete(inst, step, "then" if taken else "else",
                               step.then if taken else step.else_)
            elif isinstance(step, ContractCall):
                self._contract_call(inst, step, i)
            else:
                self._event_wait(inst, step, i)
        except StepFailed as exc:
            self._fail(inst, exc.cause, exc)
        except _Revert as exc:
            self._fail(inst, exc.reason)
        except (ChainFaasError, RuntimeError) as exc:
            self._fail(inst, f"{type(exc).__name__}: {exc}")

    def _value(self, inst, ref):
        if "var" in ref:
            return inst.variables[ref["var"]]
        return ref["lit"]

    def _function_call(self, inst, step: FunctionCall):
        platform = self.sim.platforms[step.platform]
        payload = {k: self._value(inst, ref) for k, ref in step.input.items()}
        try:
            result = platform.invoke_function(step.function_id, payload, mode="sync")
        except Timeout as exc:
            raise StepFailed(inst.current_step, f"Timeout: {exc}") from None
        return select_result(result, step.select)

    def _contract_call(self, inst, step: ContractCall, i: int) -> None:
        if inst.waiting is None:
            args = [self._value(inst, ref) for ref in step.args]
            inst.waiting = self.gateway.invoke(self.account, step.contract_ref, step.function,
                                               args, step.max_fee, Mode.await_durability(step.k))
            return
        handle = inst.waiting
        if not handle.done:
            return
        if handle.status == "Dropped":
            raise StepFailed(i, "transaction dropped")
        outcome = self.gateway.outcome(handle)
        if outcome is None or not outcome.ok:
            reason = outcome.reason if outcome else "unknown"
            raise StepFailed(i, f"{outcome.kind if outcome else 'Missing'}: {reason}")
        self._complete(inst, step, to_scalar(outcome.value), i + 1)

    def _event_wait(self, inst, step: EventWait, i: int) -> None:
        if inst.waiting is None:
            fid = f"{self.RESUME_PREFIX}:{inst.instance_id}:{i}"
            platform = self._resume_platform()
            inbox = self._inbox

            def resume(payload, ctx, key=fid):
                inbox.setdefault(key, payload)
                return {}

            if not platform.has_function(fid):
                platform.register_function(FunctionSpec(fid, resume, 1, 0))
            binding = EventBinding(fid, EventFilter.from_dict(step.filter), fid,
                                   platform.platform_id, step.min_confirmations)
            inst.waiting = (fid, self.gateway.subscribe(binding))
            return
        fid, sub_id = inst.waiting
        if fid not in self._inbox:
            return
        self.gateway.unsubscribe(sub_id)
        self._complete(inst, step, event_result(self._inbox.pop(fid)), i + 1)

    def _resume_platform(self):
        if self.home_platform is not None:
            return self.sim.platforms[self.home_platform]
        if not self.sim.platforms:
            return self.sim.add_platform("engine")
        return next(iter(self.sim.platforms.values()))

    def _complete(self, inst, step, outcome, next_step: int) -> None:
        out = getattr(step, "output", None)
        if out:
            if len(canonical_bytes(outcome)) > self.variable_cap:
                raise StepFailed(inst.current_step, "variable exceeds size cap")
            inst.variables[out] = outcome
        tick = self.sim.now
        inst.trace.append((inst.current_step, outcome, tick))
        trace_emit(self.sim.trace, "workflow_step", "orchestration", {
            "instance": inst.instance_id, "step": inst.current_step, "outcome": outcome,
            "tick": tick,
        })
        inst.waiting = None
        inst.current_step = next_step
        wf = self.registry.workflows[inst.workflow_id]
        if next_step >= len(wf.steps):
            inst.status = "completed"

    def _fail(self, inst, cause: str, exc: StepFailed | None = None) -> None:
        inst.error = exc or StepFailed(inst.current_step, cause)
        inst.status = "failed"
        inst.waiting = None
        trace_emit(self.sim.trace, "workflow_failed", "orchestration", {
            "instance": inst.instance_id, "step": inst.current_step, "cause": cause,
        })


def run_workflow(engine: WorkflowEngine, workflow_id: str, inputs: dict, max_ticks: int = 1000):
    return engine.run_workflow(workflow_id, inputs, max_ticks)


def export_instance_trace(instances, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            for step, outcome, tick in inst.trace:
                fh.write(canonical_text({"instance": inst.instance_id, "step": step,
                                         "outcome": outcome, "tick": tick}) + "\n")


# --------------------------------------------------------------------------
# on-chain process engine
# --------------------------------------------------------------------------

def _key(*parts):
    return op("concat", lit("inst:"), arg(0), *parts)


def _step_key():
    return _key(lit(":step"))


def _var_key(name: str):
    return _key(lit(":var:"), lit(name))


def _onchain_value(ref):
    if "var" in ref:
        return state(_var_key(ref["var"]))
    return lit(ref["lit"])


def _request_actions(definition: WorkflowDefinition, j: int) -> list[dict]:
    """Actions that hand control to the oracle for step ``j`` (or finish the instance)."""
    if j >= len(definition.steps):
        return [emit(EventKind.BUSINESS_LOGIC, "WorkflowCompleted", {"instance": arg(0)})]
    step = definition.steps[j]
    payload = {"cb": lit("advance"), "ref": arg(0), "step": lit(j)}
    if isinstance(step, FunctionCall):
        payload["endpoint"] = lit(f"faas:{step.platform}/{step.function_id}")
        for name, ref in step.input.items():
            payload[f"in:{name}"] = _onchain_value(ref)
        if step.select is not None:
            payload["select"] = lit(step.select)
    elif isinstance(step, ContractCall):
        payload["endpoint"] = lit("contract:call")
        payload["contract"] = lit(step.contract_ref)
        payload["function"] = lit(step.function)
        payload["k"] = lit(step.k)
        payload["max_fee"] = lit(step.max_fee)
        payload["argc"] = lit(len(step.args))
        for i, ref in enumerate(step.args):
            payload[f"arg:{i}"] = _onchain_value(ref)
    elif isinstance(step, EventWait):
        payload["endpoint"] = lit("event:wait")
        payload["filter"] = lit(canonical_text(step.filter))
        payload["min_conf"] = lit(step.min_confirmations)
    elif isinstance(step, Choice):
        payload["endpoint"] = lit("engine:noop")
    else:
        raise UnsupportedStep(type(step).__name__)
    return [emit(EventKind.EXTERNAL_CALL_REQUESTED, "StepRequested", payload)]


def _completed(k: int, result_expr, next_step: int, definition, output=None) -> list[dict]:
    actions = []
    if output:
        actions.append(set_(_var_key(output), arg(1)))
    actions.append(set_(_step_key(), lit(next_step)))
    actions.append(emit(EventKind.BUSINESS_LOGIC, "StepCompleted",
                        {"instance": arg(0), "step": lit(k), "result": result_expr}))
    return actions + _request_actions(definition, next_step)


def compile_workflow_to_contract(definition: WorkflowDefinition | dict) -> ContractDefinition:
    """Compile to a process-engine contract with ``start`` and restricted ``advance``.

    The result is a pure function of the definition, so its address is stable.
    """
    if isinstance(definition, dict):
        definition = WorkflowDefinition.from_document(definition)
    validate_workflow(definition)
    n = len(definition.steps)
    current = state(_step_key(), NOT_STARTED)

    start_sets = [set_(_var_key(name), arg(i + 1)) for i, name in enumerate(definition.inputs)]
    start = function(
        "start", ["any"] + ["any"] * len(definition.inputs),
        command(op("!=", current, lit(NOT_STARTED)), revert("already started")),
        command(lit(True), *start_sets, set_(_step_key(), lit(0)),
                emit(EventKind.BUSINESS_LOGIC, "InstanceStarted", {"instance": arg(0)}),
                *_request_actions(definition, 0)),
    )

    guards = [
        command(op("==", current, lit(FAILED)), revert("instance failed")),
        command(op("==", current, lit(NOT_STARTED)), revert("not started")),
        command(op(">=", current, lit(n)), revert("already complete")),
        command(op("not", arg(2)), set_(_step_key(), lit(FAILED)),
                emit(EventKind.BUSINESS_LOGIC, "StepFailed",
                     {"instance": arg(0), "step": current, "reason": arg(1)})),
    ]
    for k, step in enumerate(definition.steps):
        at_k = op("==", current, lit(k))
        if isinstance(step, Choice):
            cond = substitute_vars(step.condition, lambda v: state(_var_key(v)))
            guards.append(command(op("and", at_k, cond),
                                  *_completed(k, lit("then"), step.then, definition)))
            guards.append(command(op("and", at_k, op("not", cond)),
                                  *_completed(k, lit("else"), step.else_, definition)))
        else:
            guards.append(command(at_k, *_completed(k, arg(1), k + 1, definition,
                                                    getattr(step, "output", None))))
    advance = function("advance", ["any", "any", "bool"], *guards)
    return ContractDefinition.from_document({
        "functions": [start, advance], "restricted": ["advance"],
    })


def deploy_workflow_engine(node, definition, oracle_account) -> str:
    """Deploy the compiled engine with the oracle account as the sole authorised advancer."""
    return deploy_contract(node, compile_workflow_to_contract(definition), oracle_account)


def start_onchain_instance(gateway: Gateway, account, engine_contract: str, instance_id,
                           definition: WorkflowDefinition, inputs: dict, max_fee: int = 1000):
    args = [instance_id] + [inputs[name] for name in definition.inputs]
    return gateway.invoke(account, engine_contract, "start", args, max_fee)


def advance_onchain_instance(gateway: Gateway, engine_contract: str, instance_id, step_result,
                             ok: bool = True, account=None, max_fee: int | None = None):
    account = account if account is not None else gateway.oracle_account
    return gateway.invoke(account, engine_contract, "advance", [instance_id, step_result, ok],
                          gateway.callback_max_fee if max_fee is None else max_fee)


def onchain_outcomes(node, engine_contract: str, instance_id, credential=None):
    """(step, result) pairs from the StepCompleted events of one instance, in chain order."""
    events = node.read_event_log(
        0, node.tip_height,
        EventFilter(kinds=frozenset({EventKind.BUSINESS_LOGIC}), emitter=engine_contract,
                    name="StepCompleted"),
        credential,
    )
    return [(ev.payload["step"], ev.payload["result"]) for ev in events
            if ev.payload["instance"] == instance_id]


def install_engine_endpoints(gateway: Gateway, platforms, caller: str,
                             variable_cap: int = DEFAULT_VARIABLE_CAP) -> None:
    """Teach the oracle the endpoint families the compiled engine requests.

    ``caller`` is the vault identity the oracle uses for contract steps.
    """

    def capped(value):
        value = to_scalar(value)
        if len(canonical_bytes(value)) > variable_cap:
            raise ValueError("variable exceeds size cap")
        return value

    def faas_endpoint(name: str):
        platform_id, _, fid = name[len("faas:"):].partition("/")

        def call(payload, gw):
            platform = platforms[platform_id]
            inputs = {k[3:]: v for k, v in payload.items() if k.startswith("in:")}
            result = platform.invoke_function(fid, inputs, mode="sync")
            return capped(select_result(result, payload.get("select")))

        return Endpoint(name, f"sim://{platform_id}/{fid}", "POST", call)

    def contract_call(payload, gw):
        args = [payload[f"arg:{i}"] for i in range(payload["argc"])]
        handle = gw.invoke(caller, payload["contract"], payload["function"], args,
                           payload["max_fee"], Mode.await_durability(payload["k"]))

        def poll():
            if not handle.done:
                return None
            if handle.status == "Dropped":
                return ("transaction dropped", False)
            outcome = gw.outcome(handle)
            if outcome is None or not outcome.ok:
                return (f"{outcome.kind}: {outcome.reason}" if outcome else "missing", False)
            return (capped(outcome.value), True)

        return Deferred(poll)

    def event_wait(payload, gw):
        cursor = EventCursor(gw.node, EventFilter.from_dict(json.loads(payload["filter"])),
                             payload.get("min_conf", 1), gw.credential())

        def poll():
            found = cursor.scan(gw.credential())
            return (event_result(found[0]), True) if found else None

        return Deferred(poll)

    fixed = {
        "contract:call": Endpoint("contract:call", "sim://chain/call", "POST", contract_call),
        "event:wait": Endpoint("event:wait", "sim://chain/events", "GET", event_wait),
        "engine:noop": Endpoint("engine:noop", "sim://engine/noop", "POST", lambda p, g: ""),
    }

    def resolver(name: str):
        if name in fixed:
            return fixed[name]
        if name.startswith("faas:"):
            return faas_endpoint(name)
        return None

    gateway.endpoint_resolvers.append(resolver)

