"""Exception hierarchy shared by every layer of the package."""


class ImmseError(Exception):
    """Base class for all errors raised by immselab."""


class NonDegeneracyViolation(ImmseError):
    """A diffusion evaluation fell below the declared bound G**2 >= K."""


class NonFinite(ImmseError):
    """A simulated state became inf or nan."""


class InvalidModel(ImmseError):
    pass


class UnsupportedInput(ImmseError):
    """The (system, input model) pair has no exact conditioning route."""


class TooFewReplicates(ImmseError):
    pass


class NotStrongSnr(ImmseError):
    """Raised when a strong-SNR-only identity is requested for a weaker system."""


class QuadratureUnstable(ImmseError):
    pass


class TooLarge(ImmseError):
    pass


class ConfigError(ImmseError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
