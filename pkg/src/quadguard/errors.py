"""Package-wide error types, kept separate so every layer can share them."""


class ConfigError(ValueError):
    """A config block, preset name, or schedule is malformed or inconsistent."""


class NumericError(RuntimeError):
    """A filter or training step produced a non-finite or singular quantity."""
