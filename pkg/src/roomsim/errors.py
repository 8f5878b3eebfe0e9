"""Exception taxonomy shared across modules.

The CLI maps these onto its exit-code contract: missing inputs exit 2,
degenerate or invalid data exits 3, numerical failures exit 4.
"""


class RoomsimError(Exception):
    """Base class for toolkit errors."""


class EngineError(RoomsimError):
    """A simulation engine was asked to do something it cannot."""


class DegenerateDataError(RoomsimError):
    """Empty or degenerate data where substance was required."""


class NumericalError(RoomsimError):
    """A numerical routine failed to produce a usable result."""
