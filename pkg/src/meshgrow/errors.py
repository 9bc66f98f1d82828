"""Exception hierarchy shared across the package."""


class MeshGrowError(Exception):
    pass


class ContractError(MeshGrowError, ValueError):
    """Shape, range or precondition violation."""


class TopologyError(ContractError):
    pass


class MeshParseError(ContractError):
    pass


class NumericFault(MeshGrowError, FloatingPointError):
    """A NaN or Inf appeared in a computation."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CheckpointError(MeshGrowError):
    pass
