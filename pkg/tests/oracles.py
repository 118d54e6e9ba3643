"""Independent reference computations used to derive expected values.

Nothing here imports the package: digests, signatures and the counter's
metering are recomputed from first principles with the standard library.
"""

import hashlib
import hmac
import json

TAG = b"chainfaas-sim-v1:"


def canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def address(seed: str) -> str:
    return sha(TAG + seed.encode())


def secret(seed: str) -> bytes:
    return hashlib.sha256(b"secret:" + TAG + seed.encode()).digest()


def signature(seed: str, body: bytes) -> str:
    return hmac.new(secret(seed), body, hashlib.sha256).hexdigest()


def tx_id(body: dict) -> str:
    return sha(canon(body))


def counter_inc_by_hand(count: int, gas_price: int):
    """Walk the single guarded command of inc(): guard, set, emit."""
    steps = 0
    steps += 1          # guard `true` evaluated
    count = count + 1   # set(count, count + 1)
    steps += 1
    event = ("ContractState", "CountChanged", {"value": count})
    steps += 1          # emit
    return {"count": count}, [event], steps, steps * gas_price


def cost_ratio(n_calls, steps_per_call, gas_price, fee_unit_ether, ether_usd,
               n_invocations, faas_units_per_invocation, faas_price_usd):
    onchain = n_calls * steps_per_call * gas_price * fee_unit_ether * ether_usd
    faas = n_invocations * faas_units_per_invocation * faas_price_usd
    return onchain / faas
