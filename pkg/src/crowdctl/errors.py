"""Exception types shared across modules."""


class SynthesisError(ValueError):
    """An ansatz violates a validity constraint, or a waveform cannot be sampled."""

    def __init__(self, message, t=None, constraint=None):
        super().__init__(message)
        self.t = t
        self.constraint = constraint


class UndersamplingError(SynthesisError):
    pass


class SolverError(RuntimeError):
    """The coefficient solver failed; carries the best point it reached."""

    def __init__(self, message, best_x=None, best_residuals=None, iterations=0, constraint=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_residuals = best_residuals
        self.iterations = iterations
        self.constraint = constraint


class VerificationError(RuntimeError):
    """A designed program did not reproduce its target under numeric propagation."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IntegrationError(RuntimeError):
    """Norm, trace or positivity drift beyond tolerance during propagation."""


class StructuralError(RuntimeError):
    """A 4x4 propagator leaked between the two 2x2 blocks."""
