"""Exception types shared across the package."""


class FeatgenError(Exception):
    """Base class for all featgen errors."""


class SchemaError(FeatgenError):
    """Bad input data or schema: missing columns, unparseable cells, etc."""


class ConfigError(FeatgenError):
    """Invalid configuration value or combination."""


class NoPartnerError(FeatgenError):
    """No eligible partner feature exists for a binary/cross operator."""
