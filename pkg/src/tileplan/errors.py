"""Exception hierarchy shared by every stage of the planner."""


class TilePlanError(Exception):
    """Base class. ``code`` is the machine-readable prefix used by the CLI."""

    code = "E_TILEPLAN"


class ParseError(TilePlanError):
    code = "E_PARSE"


class ValidationError(TilePlanError, ValueError):
    """An invariant was violated. ``field`` names the offending field."""

    code = "E_VALIDATION"

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class BindingError(TilePlanError):
    code = "E_BINDING"


class EmptyCandidateSetError(TilePlanError):
    code = "E_EMPTY_CANDIDATES"


class ChainError(TilePlanError):
    code = "E_CHAIN"


class BankError(TilePlanError):
    code = "E_BANK"


class BankVersionError(BankError):
    code = "E_BANK_VERSION"


class DigestMismatchError(BankError):
    code = "E_DIGEST"


class CorruptBankError(BankError):
    code = "E_CORRUPT_BANK"


class PlanError(TilePlanError):
    code = "E_PLAN"


class CapacityError(TilePlanError):
    code = "E_CAPACITY"
