"""
Errors raised by the routing engine, the derivations and the simulator.

Everything derives from RoutePilotError so the CLI can turn any of them into
a clean non-zero exit.
"""


class RoutePilotError(Exception):
    """Base class for all routepilot errors."""


class InvalidParameterError(RoutePilotError, ValueError):
    """A parameter is outside the range where the model is defined."""


class DuplicateFieldError(InvalidParameterError):
    """A dimension key was built with the same field name twice."""


class OutOfOrderOutcomeError(RoutePilotError):
    """An outcome was fed to a sliding window with a timestamp older than its newest entry."""


class NoEligibleGatewayError(RoutePilotError):
    """The merchant eligibility predicate rejected every candidate gateway."""


class DuplicateTransactionError(RoutePilotError):
    """A transaction id was registered for initiation twice."""


class DegenerateDerivationError(InvalidParameterError):
    """A closed-form derivation was asked for outside its validity region."""


class ScenarioError(RoutePilotError):
    """A scenario document violates the schema. `field` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
