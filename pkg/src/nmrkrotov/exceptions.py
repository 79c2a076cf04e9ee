class UnsupportedVariantError(ValueError):
    """Operation is not defined for the given objective variant."""


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class PulseTableParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")
