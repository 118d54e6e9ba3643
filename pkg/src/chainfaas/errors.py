"""Exception hierarchy.

Every failure mode named by an operation contract is its own class so callers
(and tests) can match on it precisely.
"""


class ChainFaasError(Exception):
    pass


# identity
class DuplicateAddress(ChainFaasError):
    pass


class UnknownAccount(ChainFaasError):
    pass


class NotDeployer(ChainFaasError):
    pass


# ledger
class InvalidSignature(ChainFaasError):
    pass


class BadNonce(ChainFaasError):
    pass


class InsufficientFunds(ChainFaasError):
    pass


class UnknownContract(ChainFaasError):
    pass


class Unauthorized(ChainFaasError):
    pass


class RangeBeyondTip(ChainFaasError):
    pass


class AuthRequired(ChainFaasError):
    pass


class ChainLoadError(ChainFaasError):
    pass


# contract_vm
class ContractExists(ChainFaasError):
    def __init__(self, address: str):
        super().__init__(f"contract already deployed at {address}")
        self.address = address


class InvalidDefinition(ChainFaasError):
    pass


class NameOwnedByOther(ChainFaasError):
    pass


# faas_runtime
class DuplicateFunction(ChainFaasError):
    pass


class UnknownFunction(ChainFaasError):
    pass


class Timeout(ChainFaasError):
    pass


# gateway
class UnresolvableName(ChainFaasError):
    pass


class UnknownEndpoint(ChainFaasError):
    pass


# orchestration
class CyclicSteps(ChainFaasError):
    pass


class UnboundVariable(ChainFaasError):
    pass


class UnsupportedStep(ChainFaasError):
    pass


class StepFailed(ChainFaasError):
    def __init__(self, index: int, cause: str):
        super().__init__(f"step {index} failed: {cause}")
        self.index = index
        self.cause = cause


# message_bus
class PayloadTooLarge(ChainFaasError):
    pass


# scenario_kit
class ParseError(ChainFaasError):
    pass


class ValidationFailed(ChainFaasError):
    def __init__(self, gaps):
        super().__init__("; ".join(f"{req}: {why}" for req, why in gaps))
        self.gaps = list(gaps)


class RuntimeFailure(ChainFaasError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class EmptyTrace(ChainFaasError):
    pass
