import sys
from pathlib import Path

import pytest

from chainfaas.contract_vm import deploy_contract
from chainfaas.faas import FunctionSpec
from chainfaas.ledger import ChainConfig
from chainfaas.scenario_kit.catalog import counter, make_handler
from chainfaas.sim import Simulation

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = Path(__file__).parent / "fixtures"
CONFIGS = ROOT / "configs"


def make_sim(p=0.0, R=1, seed=0, capacity=10, gas_price=1, oracle=False, auth=False,
             accounts=("alice", "bob"), balance=10_000, **gateway_options):
    sim = Simulation(ChainConfig(fork_probability=p, max_reorg_depth=R, block_capacity=capacity,
                                 gas_price=gas_price, rng_seed=seed, reads_require_auth=auth),
                     oracle=oracle, gateway_options=gateway_options or None)
    for name in accounts:
        acct = sim.registry.create_account(name)
        if balance:
            sim.registry.fund_account(acct.address, balance)
        sim.gateway.add_identity(name, acct)
    return sim


def with_counter(sim, deployer="alice"):
    return deploy_contract(sim.node, counter(), sim.gateway.account(deployer))


def add_platform(sim, pid="P1", functions=("echo", "logger")):
    p = sim.add_platform(pid)
    for f in functions:
        p.register_function(FunctionSpec(f, make_handler(f)))
    return p


@pytest.fixture
def sim():
    return make_sim()
