"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Bad configuration or inconsistent inputs the caller can fix."""


class ParseError(ValueError):
    """Malformed run/qrels/CSV content; message carries the line number."""
