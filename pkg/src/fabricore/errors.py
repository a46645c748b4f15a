"""Package-wide exception types."""


class ConfigurationError(ValueError):
    """Invalid model, world, or scenario configuration."""


class EngineFault(RuntimeError):
    """Non-finite intermediate or other unrecoverable engine failure.

    ``term`` names the offending fabric term when known; ``trajectory``
    carries partial rollout output when a policy-rate run is truncated.
    """

    def __init__(self, message, term=None, trajectory=None):
        super().__init__(message)
        self.term = term
        self.trajectory = trajectory


class BatchEngineFault(EngineFault):
    """One or more batch elements faulted; ``faults`` is [(index, message)]."""

    def __init__(self, faults, states=None):
        msg = "; ".join(f"[{i}] {m}" for i, m in faults)
        super().__init__(f"batch step faults: {msg}")
        self.faults = faults
        self.states = states


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its try budget."""


class OptimizationError(RuntimeError):
    """Optimizer hit a non-finite loss or gradient."""
