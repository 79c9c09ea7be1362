"""Exception types shared across modules."""


class HoloIdetError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(HoloIdetError, ValueError):
    """An argument violates a documented precondition."""


class InfeasibleError(HoloIdetError):
    """No point satisfies the constraints.

    ``certificate`` carries whatever evidence the raiser could compute, for
    example the largest achievable minimum rate.
    """

    def __init__(self, message: str, certificate: dict | None = None):
        super().__init__(message)
        self.certificate = certificate or {}


class NoDetectionError(HoloIdetError):
    """A detector received an all-zero observation."""


class SolverError(HoloIdetError):
    """A convex subproblem solver failed; ``dump`` holds the offending iterate."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}
