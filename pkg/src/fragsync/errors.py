"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid user-supplied configuration. Message names the offending key."""


class InternalError(RuntimeError):
    """Broken internal invariant (e.g. fragment spec / vector mismatch)."""


class NonFiniteError(RuntimeError):
    """A loss, gradient or parameter turned NaN/Inf; the run is aborted."""

    def __init__(self, message: str, step: int | None = None, worker: int | None = None):
        super().__init__(message)
        self.step = step
        self.worker = worker
