"""Exception hierarchy shared by every dmkit module."""


class DmkitError(Exception):
    """Base class for all dmkit failures."""


class ConfigError(DmkitError, ValueError):
    """A configuration value is invalid; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class ScenarioError(ConfigError):
    """Scenario components disagree about the domain's dimensions."""


class DimensionError(DmkitError, ValueError):
    pass


class DomainError(DmkitError, ValueError):
    """A value lies outside the support of a distribution."""


class SizeError(DmkitError, ValueError):
    pass


class TrainingError(DmkitError, RuntimeError):
    pass


class IntegrityError(DmkitError):
    """A stored digest does not match the content it seals."""


class DatasetFormatError(DmkitError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SessionError(DmkitError, RuntimeError):
    pass


class DegenerateLabelError(DmkitError, ValueError):
    pass
