"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class MirError(Exception):
    """Base class for all errors raised by :mod:`mirgmdp`."""


class ConfigurationError(MirError):
    """Invalid user-supplied configuration (bad parameters, files, flags)."""


class InvalidPriorError(ConfigurationError):
    """A reward distribution violates its family invariants."""


class InvalidInstanceError(ConfigurationError):
    """An instance cannot be built from the supplied arms."""


class InstanceFormatError(ConfigurationError):
    """An instance file is malformed; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InvalidMixError(MirError):
    """A two-arm mix was requested for an inadmissible pair of arms."""


class InvalidSupportError(MirError):
    """A portfolio puts mass on arms outside the current state."""


class IncompletePolicyError(MirError):
    """A policy table has no entry for a reachable state."""


class UnsupportedExactError(MirError):
    """Exact evaluation was requested for a family that has no finite support."""


class LatticeTooLargeError(MirError):
    """The subset lattice would exceed the materialization bound."""


class AssumptionViolation(MirError):
    """An instance fails a modelling assumption required by an algorithm.

    Attributes:
        assumption: Short name of the violated assumption, e.g. ``"lower-tail-overlap"``.
        detail: Human-readable description naming the offending arms.
    """

    def __init__(self, assumption: str, detail: str):
        self.assumption = assumption
        self.detail = detail
        super().__init__(f"{assumption} violated: {detail}")
