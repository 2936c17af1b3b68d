"""Exception hierarchy shared across flowsplit modules."""


class FlowsplitError(Exception):
    """Base class for all library errors."""


class TopologyError(FlowsplitError, ValueError):
    """Structural problem in a scenario; ``key_path`` points into the JSON."""

    def __init__(self, message: str, key_path: str = ""):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}" if key_path else message)


class CycleError(TopologyError):
    def __init__(self, cycle, key_path: str = "junctions"):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle), key_path)


class UnreachableFlowError(TopologyError):
    pass


class PolicyError(FlowsplitError, ValueError):
    pass


class InstabilityError(FlowsplitError, ValueError):
    """At least one queue has utilization >= 1."""

    def __init__(self, queues, message: str = ""):
        self.queues = tuple(queues)
        super().__init__(message or "unstable queues: " + ", ".join(map(str, self.queues)))


class InconsistentAlphasError(FlowsplitError, ValueError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"path probabilities are not consistent with any routing matrix "
                         f"(residual {residual:.3e})")


class HorizonError(FlowsplitError, ValueError):
    pass


class NumericalError(FlowsplitError, ArithmeticError):
    pass


class InfeasibleError(FlowsplitError, ValueError):
    pass


class DimensionError(FlowsplitError, ValueError):
    pass
