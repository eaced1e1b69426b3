"""Exception hierarchy shared by every gcnsim module."""


class GcnError(Exception):
    """Base class for all simulator errors."""


class ValidationError(GcnError):
    """Scenario document rejected; ``path`` names the offending location."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path) or "<root>"
        super().__init__(f"{where}: {message}")


class SchemaError(ValidationError):
    pass


class InvariantError(ValidationError):
    pass


class UnknownGcs(GcnError):
    pass


class UnpoweredDemand(GcnError):
    """Positive demand against zero provisioned green energy."""


class EmptyVector(GcnError):
    pass


class TooLarge(GcnError):
    """Exhaustive oracle refused: search space above its limit."""


class Unreachable(GcnError):
    pass


class UnknownDataNode(GcnError):
    pass


class CapacityExhausted(GcnError):
    """No cloudlet can host a mandatory Avatar (public data center overflow)."""


class ScenarioMismatch(GcnError):
    pass


class IoError(GcnError):
    pass
