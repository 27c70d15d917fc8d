"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid scenario, pilot or learner configuration."""


class DimensionError(ValueError):
    """Array shapes that should agree do not."""


class ContractError(ValueError):
    """A caller violated a documented precondition (e.g. action outside [0, 1])."""


class NumericalError(ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class ProtocolError(RuntimeError):
    """Coordinator message protocol was violated."""


class StateError(RuntimeError):
    """An object was used in the wrong lifecycle state."""
