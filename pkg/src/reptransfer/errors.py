"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class IntegrityError(RuntimeError):
    """A persisted artifact failed its checksum or structural validation."""


class MissingPrerequisiteError(FileNotFoundError):
    """A command needs an artifact that has not been produced yet."""
