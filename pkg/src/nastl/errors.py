"""Exception hierarchy shared across the lab."""


class NastlError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class FormatError(NastlError):
    """Malformed benchmark/checkpoint/manifest file."""


class ValidationError(NastlError):
    """Well-formed file with inconsistent contents."""


class LookupMissError(NastlError):
    """Unknown architecture, task or split."""


class SpecError(NastlError):
    """Invalid synthetic-benchmark or experiment specification."""


class ContractError(NastlError):
    """Caller violated an API precondition (masked action, bad shapes, ...)."""


class NumericFault(NastlError):
    """Non-finite value produced where finite math was required."""


class CheckpointError(NastlError):
    """Unreadable, corrupt or incompatible checkpoint."""
