"""Exception types shared across the package."""


class WmspotError(Exception):
    """Base class for all package errors."""


class ParameterError(WmspotError, ValueError):
    """An argument is outside its documented domain."""


class ConfigError(WmspotError):
    """Catalogs, config files or split settings are unusable."""


class FontError(WmspotError):
    """A font cannot render the requested text."""


class PlacementError(WmspotError, ValueError):
    """A watermark anchor lies outside the page."""


class ShapeError(WmspotError, ValueError):
    """Array shapes do not agree."""


class NumericError(WmspotError, ArithmeticError):
    """A non-finite value reached a kernel that requires finite input."""


class ContractError(WmspotError):
    """A pluggable callback broke its contract."""


class DataError(WmspotError):
    """Dataset content is missing or corrupt."""
