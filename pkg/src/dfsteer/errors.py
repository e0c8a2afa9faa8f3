"""Exception types raised by the library."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the system dimensions."""


class CausalityError(ValueError):
    """A gain would feed a disturbance into an earlier or simultaneous input."""


class MissingHistoryError(ValueError):
    """The disturbance history passed to a control law is too short."""


class DegenerateSampleError(ValueError):
    """Too few Monte Carlo samples for the requested statistic."""


class ScenarioError(ValueError):
    """A scenario or policy file is malformed or violates an invariant.

    Attributes:
        field: dotted path of the offending field, when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        prefix = f"{field}: " if field else ""
        super().__init__(prefix + message)
