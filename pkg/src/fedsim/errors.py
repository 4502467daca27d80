"""Exception types shared across the framework."""


class FedSimError(Exception):
    pass


class ShapeError(FedSimError, ValueError):
    """Parameter or feature dimensions do not line up."""


class EmptyDatasetError(FedSimError, ValueError):
    pass


class FormatError(FedSimError, ValueError):
    """A file on disk does not follow the expected binary or text layout."""


class InsufficientDataError(FedSimError, ValueError):
    """A distributor was asked for more records than the source holds."""


class DigestMismatchError(FedSimError):
    """A checkpoint was produced by a different run configuration."""


class DispatchError(FedSimError, RuntimeError):
    """One or more clients failed during a training dispatch."""

    def __init__(self, failures):
        self.failures = dict(sorted(failures.items()))
        ids = ", ".join(str(cid) for cid in self.failures)
        first = next(iter(self.failures.values()))
        super().__init__(f"training failed on client(s) {ids}: {first!r}")


class FederationError(FedSimError, RuntimeError):
    """The round loop aborted because a component raised."""


class ConfigError(FedSimError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
