"""Exception hierarchy shared across the package."""


class DRLError(Exception):
    pass


class IllegalEvent(DRLError):
    """An event's side conditions do not hold in the configuration it was applied to."""


class InternalError(DRLError):
    pass


class NonQuiescent(DRLError):
    """The wind-down policy exceeded its step bound."""


class InvariantViolation(DRLError, AssertionError):
    def __init__(self, check: str, message: str, step: int | None = None):
        super().__init__(f"[{check}] step {step}: {message}")
        self.check = check
        self.step = step


class DomainOverlap(DRLError, ValueError):
    pass


class ConfigError(DRLError, ValueError):
    pass


class CorruptTrace(DRLError):
    pass


class VersionMismatch(CorruptTrace):
    pass


class CheckFailed(DRLError):
    def __init__(self, message: str, report=None, seed: int | None = None):
        super().__init__(message)
        self.report = report
        self.seed = seed
