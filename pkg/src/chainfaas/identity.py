"""Accounts, simulation-grade signatures, balances and function permissions."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from .canonical import canonical_bytes
from .errors import DuplicateAddress, NotDeployer, UnknownAccount, UnknownContract

SCHEME_TAG = b"chainfaas-sim-v1:"
READ_ACCESS_BODY = canonical_bytes({"op": "read_event_log"})


@dataclass
class Account:
    address: str
    secret_key: bytes = field(repr=False)
    balance: int = 0
    permissions: set[tuple[str, str]] = field(default_factory=set)


@dataclass(frozen=True)
class Credential:
    """Proof of account control attached to authenticated reads."""

    address: str
    signature: str


def derive_address(seed: bytes) -> str:
    return hashlib.sha256(SCHEME_TAG + seed).hexdigest()


def derive_secret(seed: bytes) -> bytes:
    return hashlib.sha256(b"secret:" + SCHEME_TAG + seed).digest()


def sign_bytes(secret_key: bytes, body: bytes) -> str:
    return hmac.new(secret_key, body, hashlib.sha256).hexdigest()


def sign_transaction(account: Account, tx_body: bytes) -> str:
    return sign_bytes(account.secret_key, tx_body)


class Registry:
    """Single owner of every account; mutated only from the simulation loop."""

    def __init__(self):
        self.accounts: dict[str, Account] = {}
        # contract address -> deployer address, filled in by the ledger on deploy
        self.contract_deployers: dict[str, str] = {}
        # (address, delta, reason) for every balance change
        self.balance_log: list[tuple[str, int, str]] = []

    def __contains__(self, address: str) -> bool:
        return address in self.accounts

    def get(self, address: str) -> Account:
        try:
            return self.accounts[address]
        except KeyError:
            raise UnknownAccount(address) from None

    def create_account(self, seed: bytes | str) -> Account:
        if isinstance(seed, str):
            seed = seed.encode("utf-8")
        if not seed:
            raise ValueError("seed must be non-empty")
        address = derive_address(seed)
        if address in self.accounts:
            raise DuplicateAddress(address)
        account = Account(address=address, secret_key=derive_secret(seed))
        self.accounts[address] = account
        return account

    def fund_account(self, address: str, amount: int) -> int:
        if amount <= 0:
            raise ValueError("amount must be positive")
        account = self.get(address)
        account.balance += amount
        self.balance_log.append((address, amount, "fund"))
        return account.balance

    def withdraw(self, address: str, amount: int) -> int:
        """Remove funds off-chain; the inverse of fund_account."""
        account = self.get(address)
        if amount <= 0 or amount > account.balance:
            raise ValueError("withdraw amount must be in (0, balance]")
        account.balance -= amount
        self.balance_log.append((address, -amount, "withdraw"))
        return account.balance

    def charge(self, address: str, fee: int, reason: str = "fee") -> None:
        account = self.get(address)
        if fee > account.balance:
            raise ValueError("charge exceeds balance")
        if fee:
            account.balance -= fee
            self.balance_log.append((address, -fee, reason))

    def refund(self, address: str, fee: int, reason: str = "reorg-refund") -> None:
        if fee:
            self.get(address).balance += fee
            self.balance_log.append((address, fee, reason))

    def verify_signature(self, address: str, tx_body: bytes, sig: str) -> bool:
        account = self.get(address)
        return hmac.compare_digest(sign_bytes(account.secret_key, tx_body), sig)

    def set_permission(
        self,
        grantor: str,
        grantee: str,
        contract_address: str,
        function_name: str,
        allow: bool,
    ) -> set[tuple[str, str]]:
        if contract_address not in self.contract_deployers:
            raise UnknownContract(contract_address)
        if self.contract_deployers[contract_address] != grantor:
            raise NotDeployer(grantor)
        account = self.get(grantee)
        grant = (contract_address, function_name)
        if allow:
            account.permissions.add(grant)
        else:
            account.permissions.discard(grant)
        return set(account.permissions)

    def is_granted(self, address: str, contract_address: str, function_name: str) -> bool:
        if self.contract_deployers.get(contract_address) == address:
            return True
        account = self.accounts.get(address)
        return account is not None and (contract_address, function_name) in account.permissions

    def read_credential(self, address: str) -> Credential:
        return Credential(address, sign_bytes(self.get(address).secret_key, READ_ACCESS_BODY))

    def check_credential(self, credential: Credential | None) -> bool:
        if credential is None or credential.address not in self.accounts:
            return False
        return self.verify_signature(credential.address, READ_ACCESS_BODY, credential.signature)

    def total_balance(self) -> int:
        return sum(a.balance for a in self.accounts.values())


# module-level aliases matching the operation names
def create_account(registry: Registry, seed: bytes | str) -> Account:
    return registry.create_account(seed)


def fund_account(registry: Registry, address: str, amount: int) -> int:
    return registry.fund_account(address, amount)


def verify_signature(registry: Registry, address: str, tx_body: bytes, sig: str) -> bool:
    return registry.verify_signature(address, tx_body, sig)


def set_permission(registry, grantor, grantee, contract_address, function_name, allow):
    return registry.set_permission(grantor, grantee, contract_address, function_name, allow)
