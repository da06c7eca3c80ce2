class ConfigurationError(ValueError):
    """Invalid experiment, environment or agent configuration."""


class UsageError(RuntimeError):
    """An object was used outside of its contract (e.g. stepping a finished episode)."""


class DependencyError(ImportError):
    """An optional third-party package needed for the request is not installed."""

    def __init__(self, package: str, purpose: str = ""):
        self.package = package
        msg = f"missing optional dependency {package!r}"
        if purpose:
            msg += f" (needed for {purpose})"
        super().__init__(msg + f"; install it with `pip install {package}`")


class UnsupportedEnvError(ConfigurationError):
    """Raised when an operation needs a capability the environment lacks."""


class TrainingAborted(RuntimeError):
    """A training run hit a non-finite loss and was stopped."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


class AlignmentError(ValueError):
    """Runs being aggregated were evaluated at different episodes."""
